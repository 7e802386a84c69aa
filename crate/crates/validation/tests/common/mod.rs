#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rsboot::covariance::Covariance;
use rsboot::design::DesignCell;
use rsboot::{
    parse_design_table, BootstrapConfig, BootstrapEnsemble, BootstrapReplicate, DesignTable, FactorBox,
    QuadraticSurface,
};

pub const TABLE1_CSV: &str = include_str!("../../../core/tests/data/table1.csv");

pub fn table1(target: f64) -> DesignTable {
    parse_design_table(TABLE1_CSV.as_bytes(), target).unwrap()
}

pub fn table1_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/table1.csv")
}

/// Rounded case-study surfaces, used as a known truth.
pub fn truth_surfaces() -> (QuadraticSurface, QuadraticSurface) {
    (
        QuadraticSurface::new(2, vec![51.741, 7.750, 8.053, 20.262, 19.939, -0.038]).unwrap(),
        QuadraticSurface::new(2, vec![0.841, -0.015, -0.068, 0.620, 0.421, -0.339]).unwrap(),
    )
}

pub fn grid3() -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    for x2 in [-1.0, 0.0, 1.0] {
        for x1 in [-1.0, 0.0, 1.0] {
            pts.push(vec![x1, x2]);
        }
    }
    pts
}

/// Normal data at the 3x3 design points with mean `M(x)` and variance
/// `exp(Vlog(x))`.
pub fn synthetic_table(seed: u64, n: usize, target: f64) -> DesignTable {
    let (mean, logvar) = truth_surfaces();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = grid3()
        .into_iter()
        .map(|p| {
            let m = mean.evaluate(&p).unwrap();
            let sd = logvar.evaluate(&p).unwrap().exp().sqrt();
            let d = Normal::new(m, sd).unwrap();
            DesignCell {
                replicates: (0..n).map(|_| d.sample(&mut rng)).collect(),
                point: p,
            }
        })
        .collect();
    DesignTable::new(cells, target, &FactorBox::unit(2)).unwrap()
}

pub fn ensemble_from(t: Vec<f64>, optima: Vec<Vec<f64>>, q: Option<Vec<f64>>) -> BootstrapEnsemble {
    let b = optima.len();
    let replicates = optima
        .iter()
        .enumerate()
        .map(|(i, x)| BootstrapReplicate {
            index: i + 1,
            x_oc_star: x.clone(),
            mean_at_optimum: 0.0,
            inner_covariance: None,
            q_star: q.as_ref().map(|q| q[i]),
            ridge_applied: false,
            retries: 0,
            iteration_cap_hit: false,
        })
        .collect();
    let k = t.len();
    BootstrapEnsemble {
        config: BootstrapConfig {
            replicates: b,
            run_inner: q.is_some(),
            ..Default::default()
        },
        biases: (0..k)
            .map(|j| optima.iter().map(|x| x[j]).sum::<f64>() / b as f64 - t[j])
            .collect(),
        outer_covariance: Covariance::sample(&optima),
        point_estimate: t,
        mean_estimate: 0.0,
        replicates,
    }
}
