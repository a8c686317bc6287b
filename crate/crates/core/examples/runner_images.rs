// Runner images are keyed by the hash of the canonical dependency list and
// built once per distinct list.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use modelport::clock::SystemClock;
use modelport::metadata::Dependency;
use modelport::orchestrator::{DirectoryImageBuilder, RunnerRegistry};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let index = BTreeMap::from([
        ("numpy".to_string(), BTreeSet::from(["1.26.0".to_string()])),
        ("torch".to_string(), BTreeSet::from(["2.1.0".to_string()])),
    ]);
    let registry = RunnerRegistry::open(
        dir.path(),
        Box::new(DirectoryImageBuilder { index: Some(index) }),
        Arc::new(SystemClock),
    )?;

    let a = vec![Dependency::new("torch", "2.1.0"), Dependency::new("numpy", "1.26.0")];
    let b = vec![Dependency::new("numpy", "1.26.0"), Dependency::new("torch", "2.1.0"), Dependency::new("numpy", "1.26.0")];
    let first = registry.resolve_runner(&a)?;
    let second = registry.resolve_runner(&b)?;
    println!("{} for {}", first.image_id, first.dependency_hash);
    println!("same list in another order -> {} (builds: {})", second.image_id, registry.build_count());

    let only_numpy = registry.resolve_runner(&[Dependency::new("numpy", "1.26.0")])?;
    println!("different list -> {} (builds: {})", only_numpy.image_id, registry.build_count());

    match registry.resolve_runner(&[Dependency::new("torch", "0.0.1")]) {
        Err(e) => println!("unresolvable: {e}"),
        Ok(_) => unreachable!("not in the index"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
