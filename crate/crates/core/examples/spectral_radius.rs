//! Build sparse reservoir matrices and check the rescaled spectral radius
//! against a dense eigenvalue computation.
//!
//! cargo run --release --example spectral_radius

use esn_recon::reservoir::{construction_radius, EsnWeights, HyperParams};

fn main() -> esn_recon::Result<()> {
    for n in [50, 200, 800] {
        let hp = HyperParams {
            n_reservoir: n,
            ..Default::default()
        };
        let w = EsnWeights::new(&hp, 1)?;
        let est = construction_radius(w.w())?;
        let dense = w.w().to_dense();
        let exact = dense
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        println!(
            "N_r = {n:>4}: nnz/row {:.2}, estimated radius {:.6}, eigenvalue radius {:.6}",
            w.w().nnz() as f64 / n as f64,
            est.radius,
            exact
        );
    }
    Ok(())
}
