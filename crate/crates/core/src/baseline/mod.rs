//! Classical reference schemes: Gray-mapped QPSK, nearest-neighbour
//! detection over arbitrary constellations, pilot equalization and the
//! analytic QPSK error rate.

use std::path::Path;

use statrs::function::erf::erfc;

use crate::channel::{db_to_linear, SymbolBatch};
use crate::error::{Error, Result};
use crate::numkit::Mat;

/// Known pilot symbol, before scaling to the transmit power level.
pub const PILOT: (f64, f64) = (1.0, 0.0);

/// Channel estimates with a smaller magnitude are treated as erasures.
pub const ERASURE_FLOOR: f64 = 1e-9;

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Block error rate of Gray-mapped QPSK over `n_uses` channel uses on AWGN,
/// `1 − (1 − Q(√SNR))^(2N)`.
pub fn analytic_qpsk_bler(snr_db: f64, n_uses: usize) -> f64 {
    let p = q_function(db_to_linear(snr_db).sqrt());
    // 1 − (1 − p)^k without cancellation at small p.
    -((2 * n_uses) as f64 * (-p).ln_1p()).exp_m1()
}

fn check_qpsk(m: usize, n_uses: usize) -> Result<()> {
    if n_uses == 0 || 2 * n_uses >= usize::BITS as usize {
        return Err(Error::Invalid(format!("QPSK over {n_uses} uses is not supported")));
    }
    let size = 1usize << (2 * n_uses);
    if m >= size {
        return Err(Error::OutOfRange {
            what: "QPSK message",
            value: m,
            limit: size,
        });
    }
    Ok(())
}

/// Maps message `m` to `N` QPSK symbols (real parts then imaginary parts).
/// Bit `2k` sets the sign of use `k`'s real part and bit `2k+1` its
/// imaginary part; a zero bit maps to `+1/√2`.
pub fn qpsk_mod(m: usize, n_uses: usize) -> Result<Vec<f64>> {
    check_qpsk(m, n_uses)?;
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let sign = |bit: usize| if (m >> bit) & 1 == 0 { a } else { -a };
    let mut out = vec![0.0; 2 * n_uses];
    for k in 0..n_uses {
        out[k] = sign(2 * k);
        out[n_uses + k] = sign(2 * k + 1);
    }
    Ok(out)
}

/// Per-dimension sign decisions; zero decides for `+`.
pub fn qpsk_demod(y: &[f64], n_uses: usize) -> Result<usize> {
    if y.len() != 2 * n_uses {
        return Err(Error::shape("qpsk_demod width", 2 * n_uses, y.len()));
    }
    check_qpsk(0, n_uses)?;
    let mut m = 0;
    for k in 0..n_uses {
        m |= usize::from(y[k] < 0.0) << (2 * k);
        m |= usize::from(y[n_uses + k] < 0.0) << (2 * k + 1);
    }
    Ok(m)
}

/// A labelled set of `M` points in `R^{2N}` with unit mean symbol energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub label: String,
    points: Mat,
}

impl Constellation {
    /// Wraps `points` (one row per message) and rescales to unit mean
    /// energy per complex symbol.
    pub fn new(label: impl Into<String>, points: Mat) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let x = SymbolBatch::new(points)?;
        let e = x.mean_symbol_energy();
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::ZeroEnergy);
        }
        Ok(Constellation {
            label: label.into(),
            points: x.into_mat().scaled(1.0 / e.sqrt()),
        })
    }

    pub fn qpsk(n_uses: usize) -> Result<Self> {
        check_qpsk(0, n_uses)?;
        let rows = (0..1usize << (2 * n_uses))
            .map(|m| qpsk_mod(m, n_uses))
            .collect::<Result<Vec<_>>>()?;
        Constellation::new(format!("qpsk-{n_uses}"), Mat::from_rows(&rows)?)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn n_uses(&self) -> usize {
        self.points.cols() / 2
    }

    pub fn points(&self) -> &Mat {
        &self.points
    }

    pub fn symbols(&self) -> SymbolBatch {
        SymbolBatch::new(self.points.clone()).expect("even width checked at construction")
    }
}

/// Reads a constellation: one point per line, `2N` comma-separated numbers.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_constellation(path: impl AsRef<Path>) -> Result<Constellation> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        last_line = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(i + 1, format!("not a finite number: `{f}`"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    i + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        } else if row.len() % 2 != 0 {
            return Err(parse_err(i + 1, format!("odd column count {}", row.len())));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(last_line.max(1), "no constellation points".into()));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Constellation::new(label, Mat::from_rows(&rows)?)
        .map_err(|e| parse_err(last_line, e.to_string()))
}

/// Index of the closest point in squared Euclidean distance; ties go to the
/// lowest index.
pub fn ml_detect(c: &Constellation, y: &[f64]) -> Result<usize> {
    if y.len() != c.points.cols() {
        return Err(Error::shape("ml_detect width", c.points.cols(), y.len()));
    }
    let mut best = (0, f64::INFINITY);
    for (k, p) in c.points.rows_iter().enumerate() {
        let d: f64 = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0)
}

/// Channel estimate `ĥ = y₀ / x_p` per block from the leading pilot use.
pub fn pilot_estimates(y: &SymbolBatch, pilot: (f64, f64)) -> Result<Vec<[f64; 2]>> {
    if y.n_uses() < 2 {
        return Err(Error::shape("pilot block uses", ">= 2", y.n_uses()));
    }
    let (pr, pi) = pilot;
    let pn = pr * pr + pi * pi;
    if pn == 0.0 {
        return Err(Error::Invalid("pilot symbol must be nonzero".into()));
    }
    (0..y.batch())
        .map(|b| {
            let (yr, yi) = (y.re(b, 0), y.im(b, 0));
            let h = [(yr * pr + yi * pi) / pn, (yi * pr - yr * pi) / pn];
            let mag = h[0].hypot(h[1]);
            if mag < ERASURE_FLOOR {
                Err(Error::Erasure(mag))
            } else {
                Ok(h)
            }
        })
        .collect()
}

/// Strips the leading pilot and divides the data uses by `ĥ`.
pub fn pilot_equalize(y: &SymbolBatch, pilot: (f64, f64)) -> Result<SymbolBatch> {
    let h = pilot_estimates(y, pilot)?;
    let n = y.n_uses() - 1;
    let mut out = SymbolBatch::zeros(y.batch(), n);
    for (b, &[h1, h2]) in h.iter().enumerate() {
        let s = h1 * h1 + h2 * h2;
        for k in 0..n {
            let (yr, yi) = (y.re(b, k + 1), y.im(b, k + 1));
            out.set(b, k, (yr * h1 + yi * h2) / s, (yi * h1 - yr * h2) / s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::rbf_with_fading;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn q_function_points() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        // Q(√10) from the complementary error function tables.
        assert!((q_function(10f64.sqrt()) - 7.827e-4).abs() < 1e-6);
    }

    #[test]
    fn analytic_bler_limits() {
        assert!(analytic_qpsk_bler(200.0, 4) < 1e-300);
        let low = analytic_qpsk_bler(f64::NEG_INFINITY, 4);
        assert!((low - (1.0 - 2f64.powi(-8))).abs() < 1e-12);
        let mid = analytic_qpsk_bler(10.0, 4);
        assert!((mid - 6.243e-3).abs() < 1e-5, "{mid}");
    }

    #[test]
    fn qpsk_mapping_convention() {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(qpsk_mod(0, 1).unwrap(), vec![a, a]);
        assert_eq!(qpsk_mod(1, 1).unwrap(), vec![-a, a]);
        assert_eq!(qpsk_mod(2, 1).unwrap(), vec![a, -a]);
        assert!(qpsk_mod(4, 1).is_err());
        for m in 0..256 {
            let x = qpsk_mod(m, 4).unwrap();
            let e: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((e - 1.0).abs() < 1e-15);
            assert_eq!(qpsk_demod(&x, 4).unwrap(), m);
        }
    }

    #[test]
    fn zero_decides_plus() {
        assert_eq!(qpsk_demod(&[0.0, 0.0], 1).unwrap(), 0);
        assert_eq!(qpsk_demod(&[-0.0, -1e-300], 1).unwrap(), 2);
    }

    #[test]
    fn ml_detect_matches_qpsk_demod() {
        let c = Constellation::qpsk(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let y: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            assert_eq!(ml_detect(&c, &y).unwrap(), qpsk_demod(&y, 2).unwrap());
        }
    }

    #[test]
    fn ml_ties_go_low() {
        let c = Constellation::new("pair", Mat::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(ml_detect(&c, &[0.0, 0.3]).unwrap(), 0);
        assert_eq!(ml_detect(&c, &[-1.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn pilot_inverts_noiseless_fading() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = SymbolBatch::from_rows(&[
            [1.0, 0.3, -0.2, 0.0, 0.9, 0.4],
            [1.0, -1.1, 0.5, 0.0, 0.2, -0.7],
        ])
        .unwrap();
        let draw = rbf_with_fading(&x, &[[0.3, -1.2], [-0.05, 0.02]], 0.0, &mut rng, false);
        let eq = pilot_equalize(&draw.y, PILOT).unwrap();
        let data = x.uses(1, 2);
        assert!(eq.as_mat().max_abs_diff(data.as_mat()) < 1e-12);
        assert_eq!(pilot_equalize(&x, PILOT).unwrap(), data);
    }

    #[test]
    fn pilot_erasure() {
        let y = SymbolBatch::from_rows(&[[1e-12, 1.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(pilot_equalize(&y, PILOT), Err(Error::Erasure(_))));
    }

    #[test]
    fn load_round_trips_qpsk() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# qpsk, unnormalized").unwrap();
        for m in 0..16 {
            let x = qpsk_mod(m, 2).unwrap();
            let row: Vec<String> = x.iter().map(|v| format!("{}", 3.0 * v)).collect();
            writeln!(f, "{}", row.join(",")).unwrap();
        }
        let c = load_constellation(f.path()).unwrap();
        let q = Constellation::qpsk(2).unwrap();
        assert!(c.points().max_abs_diff(q.points()) < 1e-12);
        assert!((c.symbols().mean_symbol_energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn load_reports_line_numbers() {
        let cases = [
            ("1,0\n0,1\n1,0,1,0\n", 3),
            ("1,0\n\nx,1\n", 3),
            ("", 1),
            ("1,0,1\n", 1),
        ];
        for (body, line) in cases {
            let mut f = tempfile::NamedTempFile::new().unwrap();
            f.write_all(body.as_bytes()).unwrap();
            match load_constellation(f.path()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body:?}"),
                other => panic!("{body:?}: {other:?}"),
            }
        }
        assert!(matches!(
            load_constellation("/nonexistent/points.csv"),
            Err(Error::Io { .. })
        ));
    }
}
