//! Audit the analytic objective gradients against central finite
//! differences.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use curelab::gradcheck::{run_gradcheck, GradcheckOptions};

fn main() -> curelab::Result<()> {
    let opts = GradcheckOptions::default();
    println!(
        "auditing {} random scenarios at dims {:?}, step {:.0e}, tolerance {:.0e}",
        opts.cases, opts.dims, opts.step, opts.tolerance
    );
    let started = std::time::Instant::now();
    let report = run_gradcheck(&opts)?;
    report.print();
    println!("elapsed: {:.2?}", started.elapsed());

    // the harness must also catch a broken gradient
    let corrupted = GradcheckOptions {
        cases: 4,
        fault_injection: 0.02,
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck(&corrupted)?;
    println!(
        "fault-injection sanity: corrupted gradients detected = {}",
        !report.passed
    );
    Ok(())
}
