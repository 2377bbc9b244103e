//! Regenerates the built-in scenario files under `scenarios/`.
//!
//! cargo run --example write_scenarios

use std::path::Path;

use trajrepair::archetypes;
use trajrepair::scenario::save_scenario;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    std::fs::create_dir_all(&dir).expect("create scenarios directory");
    for (name, file) in archetypes::all() {
        let path = dir.join(name);
        save_scenario(&file, &path).expect("write scenario");
        println!("{}", path.display());
    }
}
