use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lab::CompensatedSum;
use crate::system::{DynamicalSystem, State};

/// Shortest admissible orbit.
pub const MIN_LYAPUNOV_STEPS: u64 = 100_000;

/// Exponents of the Jacobian cocycle along one orbit.
#[derive(Clone, Debug, Serialize)]
pub struct LyapunovReport {
    pub steps: u64,
    /// QR exponents of the full cocycle, largest first once converged.
    pub exponents: Vec<f64>,
    /// Time average of `ln |d phi' / d phi|`. Equals `ln m` for skew systems.
    pub base_exponent: f64,
    /// Exponents along the fiber. For skew-type systems the fiber directions
    /// span an invariant subspace and these come from the `Df` block alone;
    /// otherwise they are the full exponents minus the top one (and minus
    /// the two disk exponents `ln alpha` of a solenoid).
    pub fiber_exponents: Vec<f64>,
    /// Time average of `ln |det DF|`.
    pub log_det_average: f64,
    /// `|sum(exponents) - log_det_average|`.
    pub trace_gap: f64,
}

/// Accumulates `ln |R_ii|` of the QR iteration `Q_(j+1) R_j = M_j Q_j`.
struct QrCocycle {
    q: DMatrix<f64>,
    sums: Vec<CompensatedSum>,
}

impl QrCocycle {
    fn new(n: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            sums: vec![CompensatedSum::default(); n],
        }
    }

    fn push(&mut self, m: &DMatrix<f64>) {
        let (q, r) = (m * &self.q).qr().unpack();
        for (i, acc) in self.sums.iter_mut().enumerate() {
            acc.add(r[(i, i)].abs().ln());
        }
        self.q = q;
    }

    fn exponents(&self, steps: u64) -> Vec<f64> {
        self.sums.iter().map(|a| a.value() / steps as f64).collect()
    }
}

/// Householder QR iteration of `DF` from the identity frame along the orbit
/// of `start`.
pub fn lyapunov_spectrum(
    system: &DynamicalSystem,
    start: State,
    steps: u64,
) -> Result<LyapunovReport> {
    if steps < MIN_LYAPUNOV_STEPS {
        return Err(Error::Usage(format!(
            "Lyapunov spectra need at least {MIN_LYAPUNOV_STEPS} steps"
        )));
    }
    let n = system.state_dim();
    let d = system.fiber_dim();
    let off = n - d;
    let skew = system.is_skew();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    let mut full = QrCocycle::new(n);
    let mut fiber = QrCocycle::new(d);
    let mut base = CompensatedSum::default();
    let mut log_det = CompensatedSum::default();
    let mut s = start;
    for _ in 0..steps {
        system.jacobian_into(&s, &mut jac);
        base.add(jac[(0, 0)].abs().ln());
        log_det.add(jac.determinant().abs().ln());
        full.push(&jac);
        if skew {
            fiber.push(&jac.view((off, off), (d, d)).into_owned());
        }
        s = system.step(&s);
    }
    let exponents = full.exponents(steps);
    let fiber_exponents = if skew {
        fiber.exponents(steps)
    } else {
        let mut rest = exponents[1..].to_vec();
        if let DynamicalSystem::Solenoid(sol) = system {
            let disk = sol.alpha().ln();
            for _ in 0..2 {
                let closest = (0..rest.len())
                    .min_by(|&a, &b| (rest[a] - disk).abs().total_cmp(&(rest[b] - disk).abs()))
                    .expect("solenoid has disk exponents");
                rest.remove(closest);
            }
        }
        rest
    };
    let log_det_average = log_det.value() / steps as f64;
    Ok(LyapunovReport {
        steps,
        fiber_exponents,
        base_exponent: base.value() / steps as f64,
        trace_gap: (exponents.iter().sum::<f64>() - log_det_average).abs(),
        exponents,
        log_det_average,
    })
}
