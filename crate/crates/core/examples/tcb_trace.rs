//! Derive the minimal driver function set from the bundled call traces.

use std::collections::BTreeMap;

use teeguard::trace::{
    build_task_graphs, emit_report, minimal_set, parse_inventory, parse_trace, CallGraph,
};

const INVENTORY: &str = include_str!("../fixtures/trace/inventory.txt");
const TRACES: [&str; 3] = [
    include_str!("../fixtures/trace/record.trace"),
    include_str!("../fixtures/trace/playback.trace"),
    include_str!("../fixtures/trace/calibrate.trace"),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inventory = parse_inventory(INVENTORY)?;
    let mut graphs: BTreeMap<String, CallGraph> = BTreeMap::new();
    for text in TRACES {
        for (task, g) in build_task_graphs(&parse_trace(text)?)? {
            graphs.entry(task).or_default().merge(&g);
        }
    }
    for (task, g) in &graphs {
        println!("{task}: roots {:?}, {} edges", g.roots, g.edges.len());
    }

    let record_only = emit_report(&inventory, &minimal_set(&graphs, &["record"])?)?;
    print!("\n-- record only --\n{}", record_only.render());

    let tasks: Vec<&String> = graphs.keys().collect();
    let all = emit_report(&inventory, &minimal_set(&graphs, &tasks)?)?;
    println!(
        "\n-- all tasks: ratio {:.4}, excluded {:?}",
        all.reduction_ratio, all.excluded
    );
    Ok(())
}
