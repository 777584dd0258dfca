//! Audit every registered adjoint against central finite differences:
//! primitives, the composed adapter, the backend answer loss and the
//! end-to-end composition.
//!
//! ```bash
//! cargo run --release --example gradcheck
//! ```

use anyhow::Result;
use pathprompt::harness::run_gradcheck;

fn main() -> Result<()> {
    let report = run_gradcheck(0, 20)?;
    for r in &report.results {
        println!("{:<28} cases {:>3}  max rel err {:.3e}", r.name, r.cases, r.max_rel_err);
    }
    println!("\nworst relative error: {:.3e} (tolerance 1e-4)", report.max_rel_err);
    assert!(report.passed(1e-4));
    Ok(())
}
