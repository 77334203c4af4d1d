//! Regenerates `fixtures/flows.csv`, the synthetic flow export used by the
//! CLI tests and the sample config.

use std::path::Path;

fn main() -> std::io::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/flows.csv");
    std::fs::write(&path, regsel::synthetic::flow_csv(120, 6, 10, 2018))?;
    println!("wrote {}", path.display());
    Ok(())
}
