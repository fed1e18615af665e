//! Discriminator gradients against central finite differences, and the
//! Monte-Carlo policy gradients against exact enumeration.

use riskimit::verify::{gradient_errors, unbiasedness_suite};

fn main() -> anyhow::Result<()> {
    let (worst, skipped) = gradient_errors(20, &[0.0, 0.5, 2.0], 7)?;
    println!("discriminator: max relative error {worst:.2e} over 20 fixtures ({skipped} tied draws skipped)");
    let report = unbiasedness_suite(200_000, 7)?;
    println!("{}", report.line());
    Ok(())
}
