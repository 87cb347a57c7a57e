//! Versioned binary container for posterior draws.
//!
//! All integers are little-endian `u64` unless noted, all reals little-endian
//! IEEE-754 `f64`.
//!
//! ```text
//! magic          8 bytes  "LFDADRAW"
//! version        u16 major, u16 minor
//! dims           p1 p2 q1 q2 d n
//! seed
//! n_chains
//! n_draws
//! dataset digest 32 bytes (SHA-256)
//! basis (s, t)   degree, n_knots, knots[n_knots], domain_lo, domain_hi
//! grids (s, t)   len, points[len]
//! covariate mean d reals
//! draws          n_draws records
//! ```
//!
//! A record is `chain_id`, `iteration`, `log_likelihood`, then the state in
//! this order, matrices column-major: coefficient matrices (n·p1·p2), row
//! loadings (p1·q1), column loadings (p2·q2), score matrices (n·q1·q2),
//! coefficient variances (p1·p2), score variances (q1·q2), noise variance,
//! regression matrix (d·q1·q2), regression variances (d·q1·q2), and for
//! each axis: local precisions (p·q), multiplicative factors (q), first and
//! remaining shape.

use std::path::Path;

use lfda::model::{AxisShrinkage, ModelDims, ModelState};
use lfda::sampler::{Draw, PosteriorDraws};
use lfda::splines::BasisConfig;
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, Result};
use crate::io::atomic_write;

pub const MAGIC: [u8; 8] = *b"LFDADRAW";
pub const VERSION: (u16, u16) = (1, 0);

/// Everything stored ahead of the draw records.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub version: (u16, u16),
    pub dims: ModelDims,
    pub seed: u64,
    pub n_chains: usize,
    pub dataset_digest: [u8; 32],
    pub basis_s: BasisConfig,
    pub basis_t: BasisConfig,
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub covariate_mean: Vec<f64>,
}

impl ContainerHeader {
    pub fn digest_hex(&self) -> String {
        hex::encode(self.dataset_digest)
    }
}

#[derive(Debug, Clone)]
pub struct DrawFile {
    pub header: ContainerHeader,
    pub draws: PosteriorDraws,
}

fn state_len(d: &ModelDims) -> usize {
    let (c, s) = (d.coef_len(), d.score_len());
    d.n * c + d.p1 * d.q1 + d.p2 * d.q2 + d.n * s + c + s + 1 + 2 * d.d * s + (d.p1 + 1) * d.q1 + (d.p2 + 1) * d.q2 + 4
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn reals<'a>(&mut self, v: impl IntoIterator<Item = &'a f64>) {
        for &x in v {
            self.f64(x);
        }
    }
    fn basis(&mut self, b: &BasisConfig) {
        self.u64(b.degree);
        self.u64(b.interior_knots.len());
        self.reals(&b.interior_knots);
        self.f64(b.domain.0);
        self.f64(b.domain.1);
    }
    fn grid(&mut self, g: &[f64]) {
        self.u64(g.len());
        self.reals(g);
    }
}

/// Serialize a container. Identical inputs give identical bytes.
pub fn encode(header: &ContainerHeader, draws: &[Draw]) -> Vec<u8> {
    let d = &header.dims;
    let mut w = Writer(Vec::with_capacity(256 + draws.len() * 8 * (3 + state_len(d))));
    w.0.extend_from_slice(&MAGIC);
    w.0.extend_from_slice(&header.version.0.to_le_bytes());
    w.0.extend_from_slice(&header.version.1.to_le_bytes());
    for v in [d.p1, d.p2, d.q1, d.q2, d.d, d.n] {
        w.u64(v);
    }
    w.0.extend_from_slice(&header.seed.to_le_bytes());
    w.u64(header.n_chains);
    w.u64(draws.len());
    w.0.extend_from_slice(&header.dataset_digest);
    w.basis(&header.basis_s);
    w.basis(&header.basis_t);
    w.grid(&header.s_grid);
    w.grid(&header.t_grid);
    w.reals(&header.covariate_mean);
    for draw in draws {
        let st = &draw.state;
        w.u64(draw.chain_id);
        w.u64(draw.iteration);
        w.f64(draw.log_likelihood);
        for c in &st.coefs {
            w.reals(c.iter());
        }
        w.reals(st.load_s.iter());
        w.reals(st.load_t.iter());
        for e in &st.scores {
            w.reals(e.iter());
        }
        w.reals(st.coef_var.iter());
        w.reals(st.score_var.iter());
        w.f64(st.noise_var);
        w.reals(st.reg.iter());
        w.reals(st.reg_var.iter());
        for sh in [&st.shrink_s, &st.shrink_t] {
            w.reals(sh.local.iter());
            w.reals(sh.delta.iter());
            w.f64(sh.a_first);
            w.f64(sh.a_rest);
        }
    }
    w.0
}

pub fn write_container(path: &Path, header: &ContainerHeader, draws: &[Draw]) -> Result<()> {
    atomic_write(path, &encode(header, draws))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CliError::Container(format!("container truncated at byte {}", self.pos))),
        }
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes"));
        usize::try_from(v).map_err(|_| CliError::Container(format!("count {v} does not fit in memory")))
    }
    fn raw_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(CliError::Container(format!("container truncated at byte {}", self.pos)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self, r: usize, c: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_vec(r, c, self.reals(r * c)?))
    }
    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.reals(n)?))
    }
    fn basis(&mut self) -> Result<BasisConfig> {
        let degree = self.u64()?;
        let n = self.u64()?;
        let knots = self.reals(n)?;
        let domain = (self.f64()?, self.f64()?);
        Ok(BasisConfig::new(degree, knots, domain)?)
    }
    fn grid(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        self.reals(n)
    }
    fn shrinkage(&mut self, p: usize, q: usize) -> Result<AxisShrinkage> {
        let local = self.matrix(p, q)?;
        let delta = self.vector(q)?;
        let a_first = self.f64()?;
        let a_rest = self.f64()?;
        let mut sh = AxisShrinkage {
            local,
            tau: delta.clone(),
            delta,
            a_first,
            a_rest,
        };
        sh.recompute_tau();
        Ok(sh)
    }
}

/// Parse a container; `path` is used for error messages only.
pub fn decode(path: &Path, bytes: &[u8]) -> Result<DrawFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(CliError::Container(format!("{}: not a draw container", path.display())));
    }
    let version = (r.u16()?, r.u16()?);
    if version.0 != VERSION.0 || version.1 > VERSION.1 {
        return Err(CliError::Version {
            path: path.to_path_buf(),
            found: format!("{}.{}", version.0, version.1),
            expected: format!("{}.{}", VERSION.0, VERSION.1),
        });
    }
    let mut dv = [0usize; 6];
    for v in &mut dv {
        *v = r.u64()?;
    }
    let dims = ModelDims {
        p1: dv[0],
        p2: dv[1],
        q1: dv[2],
        q2: dv[3],
        d: dv[4],
        n: dv[5],
    };
    let seed = r.raw_u64()?;
    let n_chains = r.u64()?;
    let n_draws = r.u64()?;
    let dataset_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let basis_s = r.basis()?;
    let basis_t = r.basis()?;
    let s_grid = r.grid()?;
    let t_grid = r.grid()?;
    let covariate_mean = r.reals(dims.d)?;
    let header = ContainerHeader {
        version,
        dims,
        seed,
        n_chains,
        dataset_digest,
        basis_s: basis_s.clone(),
        basis_t: basis_t.clone(),
        s_grid,
        t_grid,
        covariate_mean,
    };
    let record = 8 * (3 + state_len(&dims));
    if (bytes.len() - r.pos) != n_draws.saturating_mul(record) {
        return Err(CliError::Container(format!(
            "{}: {} bytes of draw records, expected {} records of {} bytes",
            path.display(),
            bytes.len() - r.pos,
            n_draws,
            record
        )));
    }
    let (c, s) = (dims.coef_len(), dims.score_len());
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let chain_id = r.u64()?;
        let iteration = r.u64()?;
        let log_likelihood = r.f64()?;
        let coefs = (0..dims.n).map(|_| r.matrix(dims.p1, dims.p2)).collect::<Result<_>>()?;
        let load_s = r.matrix(dims.p1, dims.q1)?;
        let load_t = r.matrix(dims.p2, dims.q2)?;
        let scores = (0..dims.n).map(|_| r.matrix(dims.q1, dims.q2)).collect::<Result<_>>()?;
        let coef_var = r.vector(c)?;
        let score_var = r.vector(s)?;
        let noise_var = r.f64()?;
        let reg = r.matrix(dims.d, s)?;
        let reg_var = r.matrix(dims.d, s)?;
        let shrink_s = r.shrinkage(dims.p1, dims.q1)?;
        let shrink_t = r.shrinkage(dims.p2, dims.q2)?;
        draws.push(Draw {
            chain_id,
            iteration,
            log_likelihood,
            state: ModelState {
                coefs,
                load_s,
                load_t,
                scores,
                coef_var,
                score_var,
                noise_var,
                reg,
                reg_var,
                shrink_s,
                shrink_t,
            },
            omega: None,
        });
    }
    Ok(DrawFile {
        header,
        draws: PosteriorDraws {
            dims,
            basis_s,
            basis_t,
            draws,
            chains: Vec::new(),
        },
    })
}

pub fn read_container(path: &Path) -> Result<DrawFile> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(path, &bytes)
}
