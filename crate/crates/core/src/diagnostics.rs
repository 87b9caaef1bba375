//! Empirical validation of the compressed-sensing prerequisites.
//!
//! Three questions matter for recovery guarantees: how tightly ‖Φh‖²
//! concentrates around ‖h‖², how far the ensemble average E(ΦᵀΦ)
//! deviates from a multiple of the identity (its extreme singular
//! values f and g), and how large the restricted isometry constant
//! δ_s of a drawn matrix is. The first two are measured by
//! [`concentration_scan`], the third is lower-bounded by Monte Carlo
//! probes ([`rip_probe`]) with an exhaustive-support oracle for tiny
//! instances.
//!
//! The identity column of a sensing matrix is identically zero (the
//! identity commutes with everything), so all statistics here operate
//! on the non-identity columns. Raw sensing rows carry the physical
//! scale t/√m; isometry statements are about the rescaled ensemble,
//! so the scan normalizes by κ = 2/(f_raw + g_raw), placing the
//! average spectrum symmetrically around one. The probe uses the
//! analytic second moments of the row ensemble instead, since a
//! single matrix has no empirical average to normalize by.

use std::fmt;
use std::io::Write as IoWrite;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::{child_seed, sample_observable, sample_product_state, ExperimentConfig};
use crate::pauli::{coeff_len, PauliString};
use crate::sensing::build_row;

/// Row distribution the diagnostics draw from.
#[derive(Clone, Debug)]
pub enum RowEnsemble {
    /// Rows built exactly like the estimation pipeline: Haar product
    /// states and uniform single-site observables at fixed time.
    PauliProduct { n: usize, time: f64 },
    /// Control ensemble of stacked orthonormal frames scaled so a
    /// full stack satisfies ΦᵀΦ = I exactly.
    IsotropicOrthonormal { dim: usize },
}

/// Which coefficient columns enter the statistics.
#[derive(Clone, Debug)]
pub enum ColumnClass {
    All,
    /// Restrict to Pauli strings of the given weights, e.g. the
    /// two-and-three-body class pair of the lattice model.
    Weights(Vec<usize>),
}

impl ColumnClass {
    fn indices(&self, n: usize) -> Vec<usize> {
        (1..coeff_len(n))
            .filter(|&alpha| match self {
                ColumnClass::All => true,
                ColumnClass::Weights(ws) => {
                    let string = PauliString::from_index(n, alpha).expect("index in range");
                    ws.contains(&string.weight())
                }
            })
            .collect()
    }
}

/// E[(row entry)²]/t² for a weight-k column under the product-state
/// ensemble: the observable site must land on the support (k/n), the
/// commutator factor contributes 8/9, and each remaining support site
/// a Bloch-component second moment of 1/3.
pub fn class_second_moment(n: usize, k: usize) -> f64 {
    assert!(k >= 1 && k <= n);
    (k as f64 / n as f64) * (8.0 / 9.0) * (1.0f64 / 3.0).powi(k as i32 - 1)
}

/// Sufficient recovery threshold: g/f below (1+δ)/(1−δ) at δ = √2 − 1.
fn ratio_bound() -> f64 {
    let delta = std::f64::consts::SQRT_2 - 1.0;
    (1.0 + delta) / (1.0 - delta)
}

#[derive(Clone, Debug)]
pub struct ConcentrationReport {
    pub delta_grid: Vec<f64>,
    /// Fraction of trials with |‖Φh‖² − ‖h‖²| ≥ δ‖h‖², per δ.
    pub deviation_prob: Vec<f64>,
    pub m: usize,
    pub trials: usize,
    /// Extreme singular values of the κ-scaled ensemble average.
    pub f: f64,
    pub g: f64,
    /// Observed range of the per-row summands m·(φ_k·h)²/‖h‖².
    pub w_l: f64,
    pub w_u: f64,
    /// Normalization applied to the raw ensemble, 2/(f_raw + g_raw).
    pub kappa: f64,
    pub ratio_bound_ok: bool,
}

impl fmt::Display for ConcentrationReport {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(out, "concentration scan: m={} trials={}", self.m, self.trials)?;
        writeln!(
            out,
            "  ensemble average extremes: f={:.6} g={:.6} g/f={:.4} (bound {:.4}, ok={})",
            self.f,
            self.g,
            self.g / self.f,
            ratio_bound(),
            self.ratio_bound_ok
        )?;
        writeln!(out, "  row summand range: [{:.6}, {:.6}]", self.w_l, self.w_u)?;
        writeln!(out, "  delta  deviation_prob")?;
        for (d, p) in self.delta_grid.iter().zip(&self.deviation_prob) {
            writeln!(out, "  {:<6.3} {:.6}", d, p)?;
        }
        Ok(())
    }
}

/// CSV rows `delta,deviation_prob`, one per grid point.
pub fn write_deviation_csv(report: &ConcentrationReport, out: &mut dyn IoWrite) -> Result<()> {
    writeln!(out, "delta,deviation_prob")?;
    for (d, p) in report.delta_grid.iter().zip(&report.deviation_prob) {
        writeln!(out, "{:e},{:e}", d, p)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RipEstimate {
    pub s: usize,
    /// Certified lower bound on δ_s: max observed |‖Φx‖²/‖x‖² − 1|.
    pub delta_s_estimate: f64,
    pub samples: usize,
}

fn validate_grid(delta_grid: &[f64]) -> Result<()> {
    if delta_grid.is_empty() {
        return Err(Error::invalid("delta grid must be nonempty"));
    }
    for pair in delta_grid.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::invalid("delta grid must be strictly increasing"));
        }
    }
    if delta_grid[0] <= 0.0 {
        return Err(Error::invalid("delta values must be positive"));
    }
    Ok(())
}

struct EnsembleColumns {
    /// Column indices in the full coefficient space (Pauli case) or
    /// 0..dim (isotropic case).
    cols: Vec<usize>,
}

fn resolve_columns(ensemble: &RowEnsemble, class: &ColumnClass) -> Result<EnsembleColumns> {
    match ensemble {
        RowEnsemble::PauliProduct { n, time } => {
            if *n == 0 || *n > crate::pauli::MAX_QUBITS {
                return Err(Error::invalid("qubit count out of range"));
            }
            if !(*time > 0.0) || !time.is_finite() {
                return Err(Error::invalid("ensemble time must be positive"));
            }
            let cols = class.indices(*n);
            if cols.is_empty() {
                return Err(Error::invalid("column class selects nothing"));
            }
            Ok(EnsembleColumns { cols })
        }
        RowEnsemble::IsotropicOrthonormal { dim } => {
            if *dim == 0 {
                return Err(Error::invalid("ensemble dimension must be positive"));
            }
            if !matches!(class, ColumnClass::All) {
                return Err(Error::invalid(
                    "weight classes are only defined for the Pauli ensemble",
                ));
            }
            Ok(EnsembleColumns { cols: (0..*dim).collect() })
        }
    }
}

/// Orthonormalize the columns of a square Gaussian draw (modified
/// Gram-Schmidt with reorthogonalization); returns the rows.
fn haar_frame(dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::from_shape_fn((dim, dim), |_| rng.sample::<f64, _>(StandardNormal));
    for j in 0..dim {
        for _ in 0..2 {
            for i in 0..j {
                let dot = q.column(i).dot(&q.column(j));
                for r in 0..dim {
                    q[[r, j]] -= dot * q[[r, i]];
                }
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        for r in 0..dim {
            q[[r, j]] /= norm;
        }
    }
    q.reversed_axes()
}

/// One matrix draw with the ensemble's native normalization folded in.
fn draw_matrix(
    ensemble: &RowEnsemble,
    cols: &EnsembleColumns,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let dr = cols.cols.len();
    match ensemble {
        RowEnsemble::PauliProduct { n, time } => {
            let scale = 1.0 / (m as f64).sqrt();
            let mut phi = Array2::zeros((m, dr));
            for k in 0..m {
                let config = ExperimentConfig {
                    state: sample_product_state(*n, rng),
                    observable: sample_observable(*n, rng),
                    time: *time,
                };
                let row = build_row(&config, *n)?;
                for (j, &alpha) in cols.cols.iter().enumerate() {
                    phi[[k, j]] = row[alpha] * scale;
                }
            }
            Ok(phi)
        }
        RowEnsemble::IsotropicOrthonormal { dim } => {
            let scale = (*dim as f64 / m as f64).sqrt();
            let mut phi = Array2::zeros((m, dr));
            let mut produced = 0;
            while produced < m {
                let frame = haar_frame(*dim, rng);
                for r in 0..*dim {
                    if produced == m {
                        break;
                    }
                    for j in 0..dr {
                        phi[[produced, j]] = frame[[r, j]] * scale;
                    }
                    produced += 1;
                }
            }
            Ok(phi)
        }
    }
}

struct ChunkStats {
    gram: Array2<f64>,
    ratios: Vec<f64>,
    raw_min: f64,
    raw_max: f64,
}

/// Draw `trials` independent matrices and test vectors, estimate
/// E(ΦᵀΦ), rescale so its spectrum straddles one, and report the
/// deviation probability of ‖Φh‖² from ‖h‖² at each δ along with the
/// extreme singular values f, g of the scaled average.
pub fn concentration_scan<F>(
    ensemble: &RowEnsemble,
    class: &ColumnClass,
    h_sampler: F,
    m: usize,
    trials: usize,
    delta_grid: &[f64],
    seed: u64,
) -> Result<ConcentrationReport>
where
    F: Fn(&mut ChaCha8Rng, usize) -> Array1<f64> + Sync,
{
    if trials < 100 {
        return Err(Error::invalid(format!("need at least 100 trials, got {trials}")));
    }
    if m == 0 {
        return Err(Error::invalid("row count must be positive"));
    }
    validate_grid(delta_grid)?;
    let cols = resolve_columns(ensemble, class)?;
    let dr = cols.cols.len();

    // fixed-size chunks keep the floating-point reduction order
    // independent of thread count
    const CHUNK: usize = 32;
    let starts: Vec<usize> = (0..trials).step_by(CHUNK).collect();
    let chunks: Vec<ChunkStats> = starts
        .par_iter()
        .map(|&start| -> Result<ChunkStats> {
            let stop = (start + CHUNK).min(trials);
            let mut gram = Array2::<f64>::zeros((dr, dr));
            let mut ratios = Vec::with_capacity(stop - start);
            let mut raw_min = f64::INFINITY;
            let mut raw_max = f64::NEG_INFINITY;
            for t in start..stop {
                let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, t as u64));
                let phi = draw_matrix(ensemble, &cols, m, &mut rng)?;
                let h = h_sampler(&mut rng, dr);
                if h.len() != dr {
                    return Err(Error::invalid(format!(
                        "test vector has length {} but ensemble has {} columns",
                        h.len(),
                        dr
                    )));
                }
                let hsq = h.dot(&h);
                if !(hsq > 0.0) || !hsq.is_finite() {
                    return Err(Error::invalid("test vector must be nonzero and finite"));
                }
                let y = phi.dot(&h);
                ratios.push(y.dot(&y) / hsq);
                for &v in y.iter() {
                    let summand = m as f64 * v * v / hsq;
                    raw_min = raw_min.min(summand);
                    raw_max = raw_max.max(summand);
                }
                gram = gram + phi.t().dot(&phi);
            }
            Ok(ChunkStats { gram, ratios, raw_min, raw_max })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut avg = Array2::<f64>::zeros((dr, dr));
    let mut ratios = Vec::with_capacity(trials);
    let mut raw_min = f64::INFINITY;
    let mut raw_max = f64::NEG_INFINITY;
    for c in chunks {
        avg = avg + c.gram;
        ratios.extend(c.ratios);
        raw_min = raw_min.min(c.raw_min);
        raw_max = raw_max.max(c.raw_max);
    }
    avg.mapv_inplace(|x| x / trials as f64);

    let spectrum = crate::linalg::eigh_real(&avg.view())?;
    let f_raw = spectrum.values[0].max(0.0);
    let g_raw = spectrum.values[dr - 1];
    if !(f_raw + g_raw > 0.0) {
        return Err(Error::numerical("ensemble average has vanished"));
    }
    let kappa = 2.0 / (f_raw + g_raw);
    let f = kappa * f_raw;
    let g = kappa * g_raw;

    let deviation_prob: Vec<f64> = delta_grid
        .iter()
        .map(|&d| {
            let count = ratios.iter().filter(|&&r| (kappa * r - 1.0).abs() >= d).count();
            count as f64 / trials as f64
        })
        .collect();

    Ok(ConcentrationReport {
        delta_grid: delta_grid.to_vec(),
        deviation_prob,
        m,
        trials,
        f,
        g,
        w_l: kappa * raw_min,
        w_u: kappa * raw_max,
        kappa,
        ratio_bound_ok: f > 0.0 && g / f < ratio_bound(),
    })
}

/// Test-vector source for the scan: random s-sparse supports with
/// Gaussian magnitudes, normalized.
pub fn gaussian_sparse_sampler(s: usize) -> impl Fn(&mut ChaCha8Rng, usize) -> Array1<f64> + Sync {
    move |rng, dim| {
        let mut h = Array1::<f64>::zeros(dim);
        for idx in sample_support(s.min(dim), dim, rng) {
            h[idx] = rng.sample(StandardNormal);
        }
        let norm = h.dot(&h).sqrt();
        if norm > 0.0 {
            h.mapv_inplace(|x| x / norm);
        } else {
            h[0] = 1.0;
        }
        h
    }
}

fn sample_support(s: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // partial Fisher-Yates
    let mut pool: Vec<usize> = (0..dim).collect();
    let mut out = Vec::with_capacity(s);
    for i in 0..s {
        let j = rng.gen_range(i..dim);
        pool.swap(i, j);
        out.push(pool[i]);
    }
    out
}

fn probe_max_deviation(
    phi: &ArrayView2<f64>,
    s: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
    fixed_magnitudes: bool,
) -> f64 {
    let dim = phi.ncols();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let support = sample_support(s, dim, rng);
        let mut x = Array1::<f64>::zeros(dim);
        for &idx in &support {
            x[idx] = if fixed_magnitudes {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign / (s as f64).sqrt()
            } else {
                rng.sample(StandardNormal)
            };
        }
        let xsq = x.dot(&x);
        if xsq == 0.0 {
            continue;
        }
        let y = phi.dot(&x);
        worst = worst.max((y.dot(&y) / xsq - 1.0).abs());
    }
    worst
}

fn validate_probe(dim: usize, s: usize, m: usize, samples: usize) -> Result<()> {
    if s == 0 || 2 * s > dim {
        return Err(Error::invalid(format!("sparsity {s} must satisfy 1 ≤ s ≤ {}/2", dim)));
    }
    if m == 0 || samples == 0 {
        return Err(Error::invalid("rows and samples must be positive"));
    }
    Ok(())
}

/// Monte Carlo lower bound on δ_s for one matrix drawn from the
/// ensemble, rescaled by the analytic class second moments so the
/// ensemble average spectrum straddles one. The true constant is
/// combinatorial; this reports the max deviation over random s-sparse
/// vectors, which never overestimates.
pub fn rip_probe(
    ensemble: &RowEnsemble,
    class: &ColumnClass,
    s: usize,
    m: usize,
    samples: usize,
    seed: u64,
) -> Result<RipEstimate> {
    let cols = resolve_columns(ensemble, class)?;
    let dr = cols.cols.len();
    validate_probe(dr, s, m, samples)?;

    let kappa = match ensemble {
        RowEnsemble::PauliProduct { n, time } => {
            let mut weights: Vec<usize> = cols
                .cols
                .iter()
                .map(|&a| PauliString::from_index(*n, a).expect("index in range").weight())
                .collect();
            weights.sort_unstable();
            weights.dedup();
            let w_small = class_second_moment(*n, *weights.last().unwrap());
            let w_large = class_second_moment(*n, weights[0]);
            2.0 / (time * time * (w_small + w_large))
        }
        RowEnsemble::IsotropicOrthonormal { .. } => 1.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = draw_matrix(ensemble, &cols, m, &mut rng)?;
    let root_kappa = kappa.sqrt();
    phi.mapv_inplace(|x| x * root_kappa);
    let estimate = probe_max_deviation(&phi.view(), s, samples, &mut rng, false);
    Ok(RipEstimate { s, delta_s_estimate: estimate, samples })
}

/// Probe an explicit matrix, taken as already normalized. With
/// `fixed_magnitudes` the test vectors are ±1/√s on random supports,
/// the same family the exhaustive oracle enumerates.
pub fn rip_probe_matrix(
    phi: &ArrayView2<f64>,
    s: usize,
    samples: usize,
    seed: u64,
    fixed_magnitudes: bool,
) -> Result<RipEstimate> {
    validate_probe(phi.ncols(), s, phi.nrows(), samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let estimate = probe_max_deviation(phi, s, samples, &mut rng, fixed_magnitudes);
    Ok(RipEstimate { s, delta_s_estimate: estimate, samples })
}

/// Exact max deviation over every support and sign pattern with
/// equal magnitudes 1/√s. Exponential in D; capped at 16 columns.
pub fn exhaustive_rip_scan(phi: &ArrayView2<f64>, s: usize) -> Result<f64> {
    let dim = phi.ncols();
    if dim > 16 {
        return Err(Error::invalid(format!("exhaustive scan capped at 16 columns, got {dim}")));
    }
    if s == 0 || s > dim {
        return Err(Error::invalid("sparsity out of range"));
    }
    let mag = 1.0 / (s as f64).sqrt();
    let mut support = Vec::with_capacity(s);
    let mut worst = 0.0f64;
    scan_supports(phi, s, 0, &mut support, mag, &mut worst);
    Ok(worst)
}

fn scan_supports(
    phi: &ArrayView2<f64>,
    s: usize,
    next: usize,
    support: &mut Vec<usize>,
    mag: f64,
    worst: &mut f64,
) {
    if support.len() == s {
        // global sign is irrelevant in ‖Φx‖², so pin the first entry
        for pattern in 0..(1usize << (s - 1)) {
            let mut x = Array1::<f64>::zeros(phi.ncols());
            for (pos, &idx) in support.iter().enumerate() {
                let neg = pos > 0 && (pattern >> (pos - 1)) & 1 == 1;
                x[idx] = if neg { -mag } else { mag };
            }
            let y = phi.dot(&x);
            *worst = worst.max((y.dot(&y) - 1.0).abs());
        }
        return;
    }
    let remaining = s - support.len();
    for idx in next..=(phi.ncols() - remaining) {
        support.push(idx);
        scan_supports(phi, s, idx + 1, support, mag, worst);
        support.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn isotropic_full_stack_is_exact_isometry() {
        let ensemble = RowEnsemble::IsotropicOrthonormal { dim: 16 };
        let grid = [0.05, 0.1, 0.2, 0.4];
        let report = concentration_scan(
            &ensemble,
            &ColumnClass::All,
            gaussian_sparse_sampler(16),
            16,
            120,
            &grid,
            11,
        )
        .unwrap();
        assert!((report.f - 1.0).abs() < 1e-10, "f = {}", report.f);
        assert!((report.g - 1.0).abs() < 1e-10, "g = {}", report.g);
        assert!(report.ratio_bound_ok);
        assert!(report.deviation_prob.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn class_pair_ratio_matches_reference_value() {
        // Two- and three-body classes of the 4-site ensemble. The
        // population ratio of the class second moments is exactly 2;
        // finite sampling widens the empirical extremes, and at this
        // trial volume the measured value should sit near the 2.176
        // reference.
        let ensemble = RowEnsemble::PauliProduct { n: 4, time: 0.1 };
        let class = ColumnClass::Weights(vec![2, 3]);
        let grid = [0.2, 0.4, 0.6];
        let report = concentration_scan(
            &ensemble,
            &class,
            gaussian_sparse_sampler(15),
            50,
            2000,
            &grid,
            42,
        )
        .unwrap();
        let ratio = report.g / report.f;
        assert!(
            (ratio - 2.176).abs() <= 0.15,
            "measured g/f = {ratio:.4}, expected 2.176 ± 0.15"
        );
        assert!(report.ratio_bound_ok, "ratio {ratio:.4} vs bound {:.4}", ratio_bound());
    }

    #[test]
    fn analytic_second_moments_match_empirical_diagonal() {
        // Single-class scan: κ·t²·w_k should come out within a few
        // percent of 1 when only weight-k columns are present.
        let t = 0.07;
        let ensemble = RowEnsemble::PauliProduct { n: 2, time: t };
        for k in 1..=2usize {
            let report = concentration_scan(
                &ensemble,
                &ColumnClass::Weights(vec![k]),
                gaussian_sparse_sampler(4),
                40,
                600,
                &[0.3],
                7 + k as u64,
            )
            .unwrap();
            let predicted = t * t * class_second_moment(2, k) * report.kappa;
            assert!(
                (predicted - 1.0).abs() < 0.05,
                "weight {k}: κ t² w = {predicted:.4}"
            );
            // within one class both extremes hug the common moment
            assert!(report.g / report.f < 1.5, "g/f = {}", report.g / report.f);
        }
    }

    #[test]
    fn deviation_probability_decays_with_rows() {
        let ensemble = RowEnsemble::PauliProduct { n: 2, time: 0.1 };
        let class = ColumnClass::Weights(vec![1]);
        let grid = [0.1, 0.2, 0.3, 0.4, 0.5];
        let probs: Vec<f64> = [20usize, 40, 80]
            .iter()
            .map(|&m| {
                let r = concentration_scan(
                    &ensemble,
                    &class,
                    gaussian_sparse_sampler(3),
                    m,
                    400,
                    &grid,
                    19,
                )
                .unwrap();
                for pair in r.deviation_prob.windows(2) {
                    assert!(pair[1] <= pair[0], "deviation_prob must be non-increasing");
                }
                r.deviation_prob[2]
            })
            .collect();
        assert!(probs[0] > probs[1] && probs[1] >= probs[2], "{probs:?}");
        assert!(probs[0] > probs[2], "{probs:?}");
    }

    #[test]
    fn isotropic_deviation_sits_below_hoeffding_bound() {
        let m = 24;
        let ensemble = RowEnsemble::IsotropicOrthonormal { dim: 16 };
        let report = concentration_scan(
            &ensemble,
            &ColumnClass::All,
            gaussian_sparse_sampler(16),
            m,
            200,
            &[0.5],
            23,
        )
        .unwrap();
        let range = report.w_u - report.w_l;
        let bound = 2.0 * (-2.0 * m as f64 * 0.25 / (range * range)).exp();
        assert!(
            report.deviation_prob[0] <= bound,
            "empirical {} vs bound {bound}",
            report.deviation_prob[0]
        );
    }

    #[test]
    fn probe_on_identity_reports_zero() {
        let phi = Array2::<f64>::eye(16);
        let est = rip_probe_matrix(&phi.view(), 4, 50, 3, false).unwrap();
        assert!(est.delta_s_estimate < 1e-12);
        assert_eq!(est.s, 4);
        assert!(exhaustive_rip_scan(&phi.view(), 2).unwrap() < 1e-12);
    }

    #[test]
    fn probe_never_exceeds_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let phi = Array2::from_shape_fn((10, 16), |_| {
            rng.sample::<f64, _>(StandardNormal) / 10f64.sqrt()
        });
        let oracle = exhaustive_rip_scan(&phi.view(), 2).unwrap();
        let probe = rip_probe_matrix(&phi.view(), 2, 4000, 5, true).unwrap();
        assert!(probe.delta_s_estimate <= oracle + 1e-12);
        // 4000 draws over 210 support/sign patterns miss nothing
        assert!(
            (probe.delta_s_estimate - oracle).abs() < 1e-12,
            "probe {} oracle {oracle}",
            probe.delta_s_estimate
        );
    }

    #[test]
    fn class_pair_probe_stays_in_reference_band() {
        // The probe needs enough rows that per-matrix fluctuation sits
        // well below the class-imbalance floor of 1/3.
        let ensemble = RowEnsemble::PauliProduct { n: 4, time: 0.1 };
        let class = ColumnClass::Weights(vec![2, 3]);
        let est = rip_probe(&ensemble, &class, 15, 600, 150, 47).unwrap();
        assert!(
            est.delta_s_estimate <= 0.47,
            "δ̂ = {} exceeds reference band",
            est.delta_s_estimate
        );
        assert!(est.delta_s_estimate >= 0.2, "δ̂ = {} suspiciously small", est.delta_s_estimate);
    }

    #[test]
    fn doubling_rows_shrinks_median_probe() {
        let ensemble = RowEnsemble::PauliProduct { n: 4, time: 0.1 };
        let class = ColumnClass::Weights(vec![2]);
        let median = |m: usize| -> f64 {
            let mut vals: Vec<f64> = (0..9)
                .map(|i| rip_probe(&ensemble, &class, 8, m, 60, 100 + i).unwrap().delta_s_estimate)
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals[4]
        };
        let at_30 = median(30);
        let at_60 = median(60);
        assert!(at_60 < at_30, "median at m=30: {at_30}, at m=60: {at_60}");
    }

    #[test]
    fn input_validation() {
        let ensemble = RowEnsemble::PauliProduct { n: 2, time: 0.1 };
        let sampler = gaussian_sparse_sampler(3);
        assert!(concentration_scan(&ensemble, &ColumnClass::All, &sampler, 10, 99, &[0.3], 1)
            .is_err());
        assert!(concentration_scan(&ensemble, &ColumnClass::All, &sampler, 0, 100, &[0.3], 1)
            .is_err());
        assert!(concentration_scan(&ensemble, &ColumnClass::All, &sampler, 10, 100, &[], 1)
            .is_err());
        assert!(concentration_scan(&ensemble, &ColumnClass::All, &sampler, 10, 100, &[0.3, 0.2], 1)
            .is_err());
        let iso = RowEnsemble::IsotropicOrthonormal { dim: 8 };
        assert!(concentration_scan(&iso, &ColumnClass::Weights(vec![1]), &sampler, 10, 100, &[0.3], 1)
            .is_err());
        // s > D/2
        assert!(rip_probe(&ensemble, &ColumnClass::All, 9, 10, 10, 1).is_err());
        let phi = Array2::<f64>::eye(20);
        assert!(exhaustive_rip_scan(&phi.view(), 2).is_err());
    }

    #[test]
    fn deviation_csv_format() {
        let report = ConcentrationReport {
            delta_grid: vec![0.1, 0.2],
            deviation_prob: vec![0.5, 0.25],
            m: 10,
            trials: 100,
            f: 0.9,
            g: 1.1,
            w_l: 0.0,
            w_u: 2.0,
            kappa: 1.0,
            ratio_bound_ok: true,
        };
        let mut buf = Vec::new();
        write_deviation_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "delta,deviation_prob");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1e-1,"));
        let shown = format!("{report}");
        assert!(shown.contains("g/f"));
    }
}
