//! Call-trace analysis for trusted-base minimization.
//!
//! Trace lines are `<timestamp> <E|X> <function> <task>`. Per task, enter and
//! exit events are replayed on a stack to recover a dynamic call graph; the
//! functions reachable from a selection of tasks form the required set and
//! everything else in the inventory gets an exclusion directive.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Enter,
    Exit,
}

impl Direction {
    pub fn symbol(self) -> char {
        match self {
            Direction::Enter => 'E',
            Direction::Exit => 'X',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub timestamp: u64,
    pub direction: Direction,
    pub function: String,
    pub task: String,
}

impl TraceEvent {
    pub fn new(timestamp: u64, direction: Direction, function: &str, task: &str) -> Self {
        Self {
            timestamp,
            direction,
            function: function.to_string(),
            task: task.to_string(),
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.timestamp,
            self.direction.symbol(),
            self.function,
            self.task
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("task {task}: unmatched enter of {}", .functions.join(", "))]
    Unbalanced {
        task: String,
        functions: Vec<String>,
    },
    #[error("task {task}: exit of {found} but {}", match .expected { Some(e) => format!("{e} is on top of the stack"), None => "the stack is empty".to_string() })]
    MismatchedExit {
        task: String,
        expected: Option<String>,
        found: String,
    },
    #[error("no trace for task {0}")]
    UnknownTask(String),
    #[error("function {0} is not in the inventory")]
    UnknownFunction(String),
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

fn parse_line(line: &str) -> Result<TraceEvent, String> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 4 {
        return Err(format!(
            "expected 4 space-separated fields, found {}",
            fields.len()
        ));
    }
    let timestamp = fields[0]
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", fields[0]))?;
    let direction = match fields[1] {
        "E" => Direction::Enter,
        "X" => Direction::Exit,
        other => return Err(format!("unknown direction {other:?}")),
    };
    for (what, s) in [("function", fields[2]), ("task", fields[3])] {
        if !is_ident(s) {
            return Err(format!("bad {what} identifier {s:?}"));
        }
    }
    Ok(TraceEvent::new(timestamp, direction, fields[2], fields[3]))
}

/// Parses a trace log. Blank lines and `#` comments are skipped; every task
/// must end with an empty call stack.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    let mut last_ts: HashMap<String, u64> = HashMap::new();
    // Per-task open frames, in task first-seen order.
    let mut stacks: Vec<(String, Vec<String>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let ev = parse_line(line).map_err(|reason| TraceError::Parse {
            line: i + 1,
            reason,
        })?;
        let prev = last_ts.entry(ev.task.clone()).or_insert(ev.timestamp);
        if ev.timestamp < *prev {
            return Err(TraceError::Parse {
                line: i + 1,
                reason: format!(
                    "timestamp {} precedes {} in task {}",
                    ev.timestamp, prev, ev.task
                ),
            });
        }
        *prev = ev.timestamp;
        let stack = match stacks.iter_mut().position(|(t, _)| *t == ev.task) {
            Some(p) => &mut stacks[p].1,
            None => {
                stacks.push((ev.task.clone(), Vec::new()));
                &mut stacks.last_mut().unwrap().1
            }
        };
        match ev.direction {
            Direction::Enter => stack.push(ev.function.clone()),
            // A mismatched exit is left for build_callgraph to report.
            Direction::Exit => {
                if stack.last() == Some(&ev.function) {
                    stack.pop();
                }
            }
        }
        events.push(ev);
    }
    if let Some((task, open)) = stacks.into_iter().find(|(_, s)| !s.is_empty()) {
        return Err(TraceError::Unbalanced {
            task,
            functions: open,
        });
    }
    Ok(events)
}

/// Inverse of [`parse_trace`] for well-formed events.
pub fn render_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{e}");
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    /// `(caller, callee)` → number of calls.
    pub edges: BTreeMap<(String, String), u64>,
    /// Functions entered at stack depth 0.
    pub roots: BTreeSet<String>,
}

impl CallGraph {
    /// Union of nodes, roots and edges; call counts add.
    pub fn merge(&mut self, other: &CallGraph) {
        self.nodes.extend(other.nodes.iter().cloned());
        self.roots.extend(other.roots.iter().cloned());
        for (e, n) in &other.edges {
            *self.edges.entry(e.clone()).or_default() += n;
        }
    }

    pub fn callees<'a>(&'a self, caller: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .range((caller.to_string(), String::new())..)
            .take_while(move |((c, _), _)| c == caller)
            .map(|((_, callee), _)| callee.as_str())
    }

    /// Everything reachable from the roots.
    pub fn reachable(&self) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = self.roots.clone();
        let mut queue: VecDeque<&str> = self.roots.iter().map(String::as_str).collect();
        while let Some(f) = queue.pop_front() {
            for c in self.callees(f) {
                if seen.insert(c.to_string()) {
                    queue.push_back(c);
                }
            }
        }
        seen
    }
}

/// One graph per task. Stacks are kept per task, so interleaved tasks do not
/// disturb each other.
pub fn build_task_graphs(events: &[TraceEvent]) -> Result<BTreeMap<String, CallGraph>, TraceError> {
    let mut graphs: BTreeMap<String, CallGraph> = BTreeMap::new();
    let mut stacks: HashMap<&str, Vec<&str>> = HashMap::new();
    for ev in events {
        let g = graphs.entry(ev.task.clone()).or_default();
        let stack = stacks.entry(ev.task.as_str()).or_default();
        match ev.direction {
            Direction::Enter => {
                g.nodes.insert(ev.function.clone());
                match stack.last() {
                    Some(&top) => {
                        *g.edges
                            .entry((top.to_string(), ev.function.clone()))
                            .or_default() += 1;
                    }
                    None => {
                        g.roots.insert(ev.function.clone());
                    }
                }
                stack.push(&ev.function);
            }
            Direction::Exit => {
                if stack.last() != Some(&ev.function.as_str()) {
                    return Err(TraceError::MismatchedExit {
                        task: ev.task.clone(),
                        expected: stack.last().map(|s| s.to_string()),
                        found: ev.function.clone(),
                    });
                }
                stack.pop();
            }
        }
    }
    if let Some((task, open)) = stacks.into_iter().find(|(_, s)| !s.is_empty()) {
        return Err(TraceError::Unbalanced {
            task: task.to_string(),
            functions: open.into_iter().map(str::to_string).collect(),
        });
    }
    Ok(graphs)
}

/// Single graph over all tasks in `events`.
pub fn build_callgraph(events: &[TraceEvent]) -> Result<CallGraph, TraceError> {
    let mut g = CallGraph::default();
    for task_graph in build_task_graphs(events)?.values() {
        g.merge(task_graph);
    }
    Ok(g)
}

/// Union over `tasks` of the functions reachable from each task's roots.
pub fn minimal_set<S: AsRef<str>>(
    graphs: &BTreeMap<String, CallGraph>,
    tasks: &[S],
) -> Result<BTreeSet<String>, TraceError> {
    let mut required = BTreeSet::new();
    for t in tasks {
        let g = graphs
            .get(t.as_ref())
            .ok_or_else(|| TraceError::UnknownTask(t.as_ref().to_string()))?;
        required.extend(g.reachable());
    }
    Ok(required)
}

pub fn directive_for(function: &str) -> String {
    format!("CFG_EXCL_{}", function.to_ascii_uppercase())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExclusionReport {
    pub inventory: Vec<String>,
    pub required: Vec<String>,
    pub excluded: Vec<String>,
    pub directives: Vec<String>,
    pub reduction_ratio: f64,
}

/// Splits `inventory` by membership in `required`, keeping inventory order.
pub fn emit_report<S: AsRef<str>>(
    inventory: &[S],
    required: &BTreeSet<String>,
) -> Result<ExclusionReport, TraceError> {
    let inventory: Vec<String> = {
        let mut seen = BTreeSet::new();
        inventory
            .iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| seen.insert(s.clone()))
            .collect()
    };
    let known: BTreeSet<&str> = inventory.iter().map(String::as_str).collect();
    if let Some(f) = required.iter().find(|f| !known.contains(f.as_str())) {
        return Err(TraceError::UnknownFunction(f.clone()));
    }
    let (req, excl): (Vec<String>, Vec<String>) = inventory
        .iter()
        .cloned()
        .partition(|f| required.contains(f));
    let reduction_ratio = if inventory.is_empty() {
        0.0
    } else {
        excl.len() as f64 / inventory.len() as f64
    };
    Ok(ExclusionReport {
        directives: excl.iter().map(|f| directive_for(f)).collect(),
        inventory,
        required: req,
        excluded: excl,
        reduction_ratio,
    })
}

impl ExclusionReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, items) in [
            ("required", &self.required),
            ("excluded", &self.excluded),
            ("directives", &self.directives),
        ] {
            let _ = writeln!(out, "[{name}]");
            for i in items {
                let _ = writeln!(out, "{i}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "[stats] inventory={} required={} excluded={} ratio={:.4}",
            self.inventory.len(),
            self.required.len(),
            self.excluded.len(),
            self.reduction_ratio
        );
        out
    }
}

/// Inventory files hold one function per line; `#` comments and blank lines
/// are ignored.
pub fn parse_inventory(text: &str) -> Result<Vec<String>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if !is_ident(s) {
            return Err(TraceError::Parse {
                line: i + 1,
                reason: format!("bad function identifier {s:?}"),
            });
        }
        out.push(s.to_string());
    }
    Ok(out)
}
