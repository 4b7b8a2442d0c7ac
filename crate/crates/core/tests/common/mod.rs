//! Shared test oracles. Independent of the library's analysis paths.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use teeguard::audio::Label;
use teeguard::classifier::{loss_and_gradient, mean_loss, Model};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor for relative error: gradients below this are compared
/// absolutely, since central differences carry ~1e-10 absolute error.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Worst relative error between the analytic gradient and central
/// differences over every parameter.
pub fn max_gradient_error<M: Model>(model: &M, corpus: &[(Vec<usize>, Label)]) -> f64 {
    let (_, analytic) = loss_and_gradient(model, corpus);
    let analytic: Vec<f64> = analytic
        .params()
        .iter()
        .flat_map(|p| p.iter().copied())
        .collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let blocks = probe.param_count();
    for flat in 0..blocks {
        let orig = get(&probe, flat);
        set(&mut probe, flat, orig + FD_STEP);
        let up = mean_loss(&probe, corpus);
        set(&mut probe, flat, orig - FD_STEP);
        let down = mean_loss(&probe, corpus);
        set(&mut probe, flat, orig);
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(analytic[flat], numeric));
    }
    worst
}

fn locate<M: Model>(m: &M, flat: usize) -> (usize, usize) {
    let mut rest = flat;
    for (b, block) in m.params().iter().enumerate() {
        if rest < block.len() {
            return (b, rest);
        }
        rest -= block.len();
    }
    panic!("parameter index {flat} out of range");
}

fn get<M: Model>(m: &M, flat: usize) -> f64 {
    let (b, i) = locate(m, flat);
    m.params()[b][i]
}

fn set<M: Model>(m: &mut M, flat: usize, v: f64) {
    let (b, i) = locate(m, flat);
    m.params_mut()[b][i] = v;
}

pub fn random_token_corpus<R: Rng>(
    rng: &mut R,
    vocab: usize,
    n: usize,
) -> Vec<(Vec<usize>, Label)> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=6);
            let toks = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            let label = if i % 2 == 0 {
                Label::Sensitive
            } else {
                Label::Benign
            };
            (toks, label)
        })
        .collect()
}

/// Independent reachability oracle: plain BFS over an adjacency map.
pub fn bfs_reachable(
    edges: &BTreeMap<String, BTreeSet<String>>,
    roots: &BTreeSet<String>,
) -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut queue: VecDeque<String> = roots.iter().cloned().collect();
    while let Some(n) = queue.pop_front() {
        if !seen.insert(n.clone()) {
            continue;
        }
        if let Some(next) = edges.get(&n) {
            queue.extend(next.iter().filter(|c| !seen.contains(*c)).cloned());
        }
    }
    seen
}

/// A random static call tree (`parent[i] < i`, node 0 is a root unless
/// `roots > 1`) and a balanced trace walking random subtrees of it, with
/// occasional self-recursion. Returns the trace text plus, per task, the
/// adjacency and roots that the walk actually exercised.
pub struct RandomTrace {
    pub text: String,
    pub functions: Vec<String>,
    pub edges: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    pub roots: BTreeMap<String, BTreeSet<String>>,
}

pub fn random_trace<R: Rng>(rng: &mut R, max_functions: usize, tasks: usize) -> RandomTrace {
    let n = rng.gen_range(1..=max_functions);
    let functions: Vec<String> = (0..n).map(|i| format!("fn_{i}")).collect();
    let parent: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if i == 0 || rng.gen_bool(0.1) {
                None
            } else {
                Some(rng.gen_range(0..i))
            }
        })
        .collect();
    let children: Vec<Vec<usize>> = (0..n)
        .map(|p| (0..n).filter(|&c| parent[c] == Some(p)).collect())
        .collect();
    let tops: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();

    let mut text = String::new();
    let mut ts = 0u64;
    let mut edges = BTreeMap::new();
    let mut roots = BTreeMap::new();
    for t in 0..tasks {
        let task = format!("task{t}");
        let e: &mut BTreeMap<String, BTreeSet<String>> = edges.entry(task.clone()).or_default();
        let r: &mut BTreeSet<String> = roots.entry(task.clone()).or_default();
        for _ in 0..rng.gen_range(1..=3) {
            let top = tops[rng.gen_range(0..tops.len())];
            r.insert(functions[top].clone());
            walk(
                rng, top, &children, &functions, &task, &mut ts, &mut text, e, 0,
            );
        }
    }
    RandomTrace {
        text,
        functions,
        edges,
        roots,
    }
}

#[allow(clippy::too_many_arguments)]
fn walk<R: Rng>(
    rng: &mut R,
    node: usize,
    children: &[Vec<usize>],
    names: &[String],
    task: &str,
    ts: &mut u64,
    out: &mut String,
    edges: &mut BTreeMap<String, BTreeSet<String>>,
    depth: usize,
) {
    *ts += rng.gen_range(0..3);
    out.push_str(&format!("{ts} E {} {task}\n", names[node]));
    for &c in &children[node] {
        if rng.gen_bool(0.6) {
            edges
                .entry(names[node].clone())
                .or_default()
                .insert(names[c].clone());
            walk(rng, c, children, names, task, ts, out, edges, depth + 1);
        }
    }
    if depth < 3 && rng.gen_bool(0.05) {
        edges
            .entry(names[node].clone())
            .or_default()
            .insert(names[node].clone());
        *ts += 1;
        out.push_str(&format!("{ts} E {} {task}\n", names[node]));
        *ts += 1;
        out.push_str(&format!("{ts} X {} {task}\n", names[node]));
    }
    *ts += rng.gen_range(0..3);
    out.push_str(&format!("{ts} X {} {task}\n", names[node]));
}

/// Per-byte model of a window `[origin, origin + len)` of the address space.
/// Each byte records whether a secure or a shared mapping covers it.
#[derive(Clone)]
pub struct ByteOracle {
    pub origin: u64,
    secure: Vec<bool>,
    shared: Vec<bool>,
}

impl ByteOracle {
    pub fn new(origin: u64, len: usize) -> Self {
        Self {
            origin,
            secure: vec![false; len],
            shared: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.secure.len()
    }

    fn idx(&self, addr: u64) -> usize {
        (addr - self.origin) as usize
    }

    /// Whether a new mapping over the range may be added (no secure byte in it),
    /// and if so records it.
    pub fn map(&mut self, base: u64, len: u64, secure: bool) -> bool {
        let lo = (base - self.origin) as usize;
        let hi = lo + len as usize;
        if self.secure[lo..hi].iter().any(|&s| s) {
            return false;
        }
        let cells = if secure {
            &mut self.secure
        } else {
            &mut self.shared
        };
        cells[lo..hi].iter_mut().for_each(|c| *c = true);
        true
    }

    pub fn is_secure(&self, addr: u64) -> bool {
        self.secure[self.idx(addr)]
    }

    pub fn is_shared(&self, addr: u64) -> bool {
        self.shared[self.idx(addr)]
    }

    /// Normal world may touch the range iff no byte of it is secure.
    pub fn normal_allowed(&self, base: u64, len: u64) -> bool {
        (base..base + len).all(|a| !self.is_secure(a))
    }
}

/// FIFO reference for the driver ring: a bounded deque that rejects new
/// frames when full.
pub struct FifoModel {
    pub cap: usize,
    pub items: VecDeque<u32>,
    pub overruns: u64,
}

impl FifoModel {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            items: VecDeque::new(),
            overruns: 0,
        }
    }

    pub fn push_all(&mut self, xs: &[u32]) -> usize {
        let mut accepted = 0;
        for &x in xs {
            if self.items.len() < self.cap {
                self.items.push_back(x);
                accepted += 1;
            } else {
                self.overruns += 1;
            }
        }
        accepted
    }

    pub fn pop(&mut self, n: usize) -> Option<Vec<u32>> {
        (self.items.len() >= n).then(|| self.items.drain(..n).collect())
    }
}
