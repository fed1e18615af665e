//! VaR, CVaR and the mean/CVaR blend of a small loss sample, plus the
//! tail density that attains the CVaR.

use riskimit::risk::{cvar_alpha, cvar_dual_oracle, rho_lambda, var_alpha, LossBatch, RiskConfig};

fn main() -> anyhow::Result<()> {
    let losses = vec![1.0, 4.0, 2.0, 9.0, 3.0, 0.5, 7.0, 2.5, 6.0, 1.5];
    let batch = LossBatch::uniform(losses.clone())?;
    for alpha in [1.0, 0.5, 0.3, 0.1] {
        let cfg = RiskConfig::new(alpha, 0.5, 0.99)?;
        println!(
            "alpha {alpha:>4}: mean {:.3} var {:.3} cvar {:.3} rho(lambda=0.5) {:.3}",
            batch.mean(),
            var_alpha(&batch, alpha)?,
            cvar_alpha(&batch, alpha)?,
            rho_lambda(&batch, &cfg)?
        );
    }
    let (value, density) = cvar_dual_oracle(&batch, 0.3)?;
    println!("\ndual value at alpha 0.3: {value:.3}");
    for (loss, zeta) in losses.iter().zip(&density.zeta) {
        println!("  loss {loss:>4} zeta {zeta:.3}");
    }
    Ok(())
}
