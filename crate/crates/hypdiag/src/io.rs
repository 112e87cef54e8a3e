//! File formats: the versioned binary kernel file consumed by the diagnosis
//! stage, measurement-trace CSV, report CSV, and grid dumps of the
//! backstepping kernels.

use std::io::{Read, Write};

use crate::backstepping::BacksteppingKernelPair;
use crate::error::{Error, Result};
use crate::simulate::SimTrace;
use crate::trajectory::{DiagnosisKernels, FieldKernel, TimeKernel};

const KERNEL_MAGIC: &[u8; 4] = b"HDKF";
const KERNEL_VERSION: u32 = 1;
const BACKSTEP_MAGIC: &[u8; 4] = b"HBKN";
const BACKSTEP_VERSION: u32 = 1;

/// Upper bound on any element count read from an untrusted header.
const MAX_ELEMENTS: u64 = 1 << 28;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated file: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64_vec(&mut self, len: u64) -> Result<Vec<f64>> {
        if len > MAX_ELEMENTS {
            return Err(Error::Format(format!("element count {len} exceeds limit")));
        }
        let bytes = self.take((len as usize) * 8)?;
        let mut out = Vec::with_capacity(len as usize);
        for c in bytes.chunks_exact(8) {
            out.push(f64::from_le_bytes(c.try_into().unwrap()));
        }
        Ok(out)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_kernel(out: &mut Vec<u8>, k: &TimeKernel) {
    put_u32(out, k.rows as u32);
    put_u32(out, k.cols as u32);
    put_u64(out, k.len as u64);
    for v in &k.data {
        put_f64(out, *v);
    }
}

fn read_kernel(c: &mut Cursor<'_>) -> Result<TimeKernel> {
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let len = c.u64()?;
    let total = (rows as u64)
        .checked_mul(cols as u64)
        .and_then(|v| v.checked_mul(len))
        .ok_or_else(|| Error::Format("kernel size overflow".into()))?;
    let data = c.f64_vec(total)?;
    Ok(TimeKernel {
        rows,
        cols,
        len: len as usize,
        data,
    })
}

/// Serialize the diagnosis kernels; the distributed field is included only
/// when `with_field` is set (it dominates the file size).
pub fn kernels_to_bytes(k: &DiagnosisKernels, with_field: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(KERNEL_MAGIC);
    put_u32(&mut out, KERNEL_VERSION);
    put_f64(&mut out, k.t);
    put_f64(&mut out, k.tau_step);
    put_u64(&mut out, k.n_tau as u64);
    for v in [k.n_neg, k.n_u, k.n_f, k.n_w, k.n_v, k.n_dt, k.n_db] {
        put_u32(&mut out, v as u32);
    }
    put_kernel(&mut out, &k.n_kernel);
    put_kernel(&mut out, &k.m_b);
    put_kernel(&mut out, &k.m_e);
    put_kernel(&mut out, &k.m_gt);
    put_kernel(&mut out, &k.m_gb);
    put_kernel(&mut out, &k.p);
    put_kernel(&mut out, &k.q);
    put_u64(&mut out, k.f_b.len() as u64);
    for v in &k.f_b {
        put_f64(&mut out, *v);
    }
    match (&k.m_field, with_field) {
        (Some(f), true) => {
            out.push(1);
            put_u64(&mut out, f.n_z as u64);
            put_u64(&mut out, f.len as u64);
            put_u32(&mut out, f.rows as u32);
            put_u32(&mut out, f.cols as u32);
            for v in &f.data {
                put_f64(&mut out, *v);
            }
        }
        _ => out.push(0),
    }
    out
}

/// Parse a kernel file. All section sizes are validated against the buffer
/// before any allocation.
pub fn kernels_from_bytes(buf: &[u8]) -> Result<DiagnosisKernels> {
    let mut c = Cursor::new(buf);
    let magic = c.take(4)?;
    if magic != KERNEL_MAGIC {
        return Err(Error::Format("bad magic; not a kernel file".into()));
    }
    let version = c.u32()?;
    if version != KERNEL_VERSION {
        return Err(Error::Format(format!("unsupported kernel file version {version}")));
    }
    let t = c.f64()?;
    let tau_step = c.f64()?;
    let n_tau = c.u64()? as usize;
    if !(t.is_finite() && tau_step.is_finite()) || t <= 0.0 || tau_step <= 0.0 {
        return Err(Error::Format("invalid window parameters".into()));
    }
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = c.u32()? as usize;
    }
    let [n_neg, n_u, n_f, n_w, n_v, n_dt, n_db] = dims;
    let n_kernel = read_kernel(&mut c)?;
    let m_b = read_kernel(&mut c)?;
    let m_e = read_kernel(&mut c)?;
    let m_gt = read_kernel(&mut c)?;
    let m_gb = read_kernel(&mut c)?;
    let p = read_kernel(&mut c)?;
    let q = read_kernel(&mut c)?;
    for (name, k, rows) in [
        ("N", &n_kernel, n_neg),
        ("M_B", &m_b, n_u),
        ("M_E", &m_e, n_f),
        ("M_Gt", &m_gt, n_dt),
        ("M_Gb", &m_gb, n_db),
        ("P", &p, n_w),
        ("Q", &q, n_v),
    ] {
        if k.rows != rows || k.cols != n_f || k.len != n_tau {
            return Err(Error::Format(format!(
                "kernel {name}: shape {}x{}x{} disagrees with header ({rows}x{n_f}x{n_tau})",
                k.len, k.rows, k.cols
            )));
        }
    }
    let fb_len = c.u64()?;
    if fb_len as usize != n_f {
        return Err(Error::Format("threshold count disagrees with n_f".into()));
    }
    let f_b = c.f64_vec(fb_len)?;
    let has_field = c.take(1)?[0];
    let m_field = if has_field == 1 {
        let n_z = c.u64()? as usize;
        let len = c.u64()? as usize;
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let total = (n_z as u64)
            .checked_mul(len as u64)
            .and_then(|v| v.checked_mul(rows as u64))
            .and_then(|v| v.checked_mul(cols as u64))
            .ok_or_else(|| Error::Format("field size overflow".into()))?;
        let data = c.f64_vec(total)?;
        Some(FieldKernel {
            n_z,
            len,
            rows,
            cols,
            data,
        })
    } else {
        None
    };
    Ok(DiagnosisKernels {
        t,
        tau_step,
        n_tau,
        n_neg,
        n_u,
        n_f,
        n_w,
        n_v,
        n_dt,
        n_db,
        n_kernel,
        m_b,
        m_e,
        m_gt,
        m_gb,
        p,
        q,
        f_b,
        m_field,
    })
}

pub fn write_kernels(path: &std::path::Path, k: &DiagnosisKernels, with_field: bool) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&kernels_to_bytes(k, with_field))?;
    Ok(())
}

pub fn read_kernels(path: &std::path::Path) -> Result<DiagnosisKernels> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    kernels_from_bytes(&buf)
}

/// Serialize a backstepping kernel pair (full square layout, the triangle
/// `zeta <= z` is meaningful).
pub fn backstepping_to_bytes(pair: &BacksteppingKernelPair) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BACKSTEP_MAGIC);
    put_u32(&mut out, BACKSTEP_VERSION);
    put_u32(&mut out, pair.n as u32);
    put_u32(&mut out, pair.n_x as u32);
    put_u32(&mut out, pair.n_neg as u32);
    for v in &pair.k {
        put_f64(&mut out, *v);
    }
    for v in &pair.k_inv {
        put_f64(&mut out, *v);
    }
    out
}

/// Parse a backstepping kernel dump into `(n, n_x, n_neg, k, k_inv)`.
pub fn backstepping_from_bytes(buf: &[u8]) -> Result<(usize, usize, usize, Vec<f64>, Vec<f64>)> {
    let mut c = Cursor::new(buf);
    if c.take(4)? != BACKSTEP_MAGIC {
        return Err(Error::Format("bad magic; not a backstepping kernel dump".into()));
    }
    let version = c.u32()?;
    if version != BACKSTEP_VERSION {
        return Err(Error::Format(format!("unsupported dump version {version}")));
    }
    let n = c.u32()? as u64;
    let n_x = c.u32()? as u64;
    let n_neg = c.u32()? as u64;
    if n < 2 || n_x == 0 || n_neg > n_x {
        return Err(Error::Format("implausible dump dimensions".into()));
    }
    let total = n
        .checked_mul(n)
        .and_then(|v| v.checked_mul(n_x * n_x))
        .ok_or_else(|| Error::Format("dump size overflow".into()))?;
    let k = c.f64_vec(total)?;
    let k_inv = c.f64_vec(total)?;
    Ok((n as usize, n_x as usize, n_neg as usize, k, k_inv))
}

/// CSV export of a kernel for plotting: columns tau, entries row-major.
pub fn kernel_csv(k: &TimeKernel, t: f64, name: &str) -> String {
    let mut s = String::new();
    s.push('t');
    for r in 0..k.rows {
        for c in 0..k.cols {
            s.push_str(&format!(",{name}_{}_{}", r + 1, c + 1));
        }
    }
    s.push('\n');
    let dt = t / (k.len - 1) as f64;
    for j in 0..k.len {
        s.push_str(&format!("{}", j as f64 * dt));
        for v in k.at(j) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Measurement trace CSV: `t, y1..yN, u1..uM` and, when ground truth is
/// present, `f1.., dt1.., db1..`.
pub fn trace_to_csv(trace: &SimTrace) -> String {
    let mut s = String::from("t");
    for i in 0..trace.n_neg {
        s.push_str(&format!(",y{}", i + 1));
    }
    for i in 0..trace.n_u {
        s.push_str(&format!(",u{}", i + 1));
    }
    for i in 0..trace.n_f {
        s.push_str(&format!(",f{}", i + 1));
    }
    for i in 0..trace.n_dt {
        s.push_str(&format!(",dt{}", i + 1));
    }
    for i in 0..trace.n_db {
        s.push_str(&format!(",db{}", i + 1));
    }
    s.push('\n');
    for k in 0..trace.samples() {
        s.push_str(&format!("{}", k as f64 * trace.dt));
        for v in trace.y_at(k) {
            s.push_str(&format!(",{v}"));
        }
        for v in trace.u_at(k) {
            s.push_str(&format!(",{v}"));
        }
        for i in 0..trace.n_f {
            s.push_str(&format!(",{}", trace.f[k * trace.n_f + i]));
        }
        for i in 0..trace.n_dt {
            s.push_str(&format!(",{}", trace.d_tilde[k * trace.n_dt + i]));
        }
        for i in 0..trace.n_db {
            s.push_str(&format!(",{}", trace.d_bar[k * trace.n_db + i]));
        }
        s.push('\n');
    }
    s
}

/// Parse a trace CSV. Requires `t`, `y*`, `u*` columns; ground-truth
/// columns are read when present and zero-filled otherwise.
pub fn trace_from_csv(text: &str) -> Result<SimTrace> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("csv header: {e}")))?
        .clone();
    let mut col_of = std::collections::HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        col_of.insert(h.trim().to_string(), i);
    }
    if !col_of.contains_key("t") {
        return Err(Error::Format("missing column t".into()));
    }
    let count = |prefix: &str| -> usize {
        let mut n = 0;
        while col_of.contains_key(&format!("{prefix}{}", n + 1)) {
            n += 1;
        }
        n
    };
    let n_neg = count("y");
    let n_u = count("u");
    let n_f = count("f");
    let n_dt = count("dt");
    let n_db = count("db");
    if n_neg == 0 {
        return Err(Error::Format("missing output columns y1..".into()));
    }

    let mut times = Vec::new();
    let mut y = Vec::new();
    let mut u = Vec::new();
    let mut f = Vec::new();
    let mut d_tilde = Vec::new();
    let mut d_bar = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("csv row {}: {e}", row + 2)))?;
        let get = |name: &str| -> Result<f64> {
            let idx = col_of[name];
            rec.get(idx)
                .ok_or_else(|| Error::Format(format!("row {}: missing field {name}", row + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: field {name}: {e}", row + 2)))
        };
        times.push(get("t")?);
        for i in 0..n_neg {
            y.push(get(&format!("y{}", i + 1))?);
        }
        for i in 0..n_u {
            u.push(get(&format!("u{}", i + 1))?);
        }
        for i in 0..n_f {
            f.push(get(&format!("f{}", i + 1))?);
        }
        for i in 0..n_dt {
            d_tilde.push(get(&format!("dt{}", i + 1))?);
        }
        for i in 0..n_db {
            d_bar.push(get(&format!("db{}", i + 1))?);
        }
    }
    if times.len() < 2 {
        return Err(Error::Format("trace needs at least two samples".into()));
    }
    let dt = times[1] - times[0];
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Format("non-increasing time column".into()));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * (1.0 + dt.abs()) {
            return Err(Error::Format("time column is not uniformly sampled".into()));
        }
    }
    let samples = times.len();
    // Traces without input columns get one zero input channel so the
    // filter bank shapes stay well-defined.
    let (n_u, u) = if n_u == 0 {
        (1, vec![0.0; samples])
    } else {
        (n_u, u)
    };
    Ok(SimTrace {
        dt,
        n_neg,
        n_u,
        n_f,
        n_dt,
        n_db,
        y,
        u,
        f,
        d_tilde,
        d_bar,
        states: None,
    })
}

/// Diagnosis report CSV.
pub fn report_to_csv(report: &crate::diagnosis::DiagnosisReport) -> String {
    let n_f = report.n_f;
    let mut s = String::from("t");
    for i in 0..n_f {
        s.push_str(&format!(",f_hat{}", i + 1));
    }
    for i in 0..n_f {
        s.push_str(&format!(",detected{}", i + 1));
    }
    for i in 0..n_f {
        s.push_str(&format!(",lower{}", i + 1));
    }
    for i in 0..n_f {
        s.push_str(&format!(",upper{}", i + 1));
    }
    s.push('\n');
    for k in 0..report.samples() {
        s.push_str(&format!("{}", report.time_at(k)));
        for i in 0..n_f {
            s.push_str(&format!(",{}", report.f_hat[k * n_f + i]));
        }
        for i in 0..n_f {
            s.push_str(&format!(",{}", u8::from(report.detected[k * n_f + i])));
        }
        for i in 0..n_f {
            s.push_str(&format!(",{}", report.lower[k * n_f + i]));
        }
        for i in 0..n_f {
            s.push_str(&format!(",{}", report.upper[k * n_f + i]));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TimeKernel;

    fn sample_kernels() -> DiagnosisKernels {
        let mk = |rows: usize, cols: usize, len: usize, seed: f64| {
            let mut k = TimeKernel::zeros(len, rows, cols);
            for (i, v) in k.data.iter_mut().enumerate() {
                *v = seed + i as f64 * 0.25;
            }
            k
        };
        DiagnosisKernels {
            t: 2.0,
            tau_step: 0.5,
            n_tau: 5,
            n_neg: 2,
            n_u: 1,
            n_f: 2,
            n_w: 1,
            n_v: 3,
            n_dt: 1,
            n_db: 2,
            n_kernel: mk(2, 2, 5, 1.0),
            m_b: mk(1, 2, 5, 2.0),
            m_e: mk(2, 2, 5, 3.0),
            m_gt: mk(1, 2, 5, 4.0),
            m_gb: mk(2, 2, 5, 5.0),
            p: mk(1, 2, 5, 6.0),
            q: mk(3, 2, 5, 7.0),
            f_b: vec![0.25, 0.75],
            m_field: Some(FieldKernel {
                n_z: 3,
                len: 5,
                rows: 4,
                cols: 2,
                data: (0..3 * 5 * 4 * 2).map(|i| i as f64).collect(),
            }),
        }
    }

    #[test]
    fn kernel_file_roundtrip() {
        let k = sample_kernels();
        let bytes = kernels_to_bytes(&k, true);
        let back = kernels_from_bytes(&bytes).unwrap();
        assert_eq!(back.n_kernel, k.n_kernel);
        assert_eq!(back.q, k.q);
        assert_eq!(back.f_b, k.f_b);
        assert_eq!(back.m_field.unwrap().data, k.m_field.unwrap().data);

        let bytes_slim = kernels_to_bytes(&sample_kernels(), false);
        let back = kernels_from_bytes(&bytes_slim).unwrap();
        assert!(back.m_field.is_none());
    }

    #[test]
    fn kernel_file_rejects_corruption() {
        let k = sample_kernels();
        let mut bytes = kernels_to_bytes(&k, false);
        bytes[0] = b'X';
        assert!(kernels_from_bytes(&bytes).is_err());
        let bytes = kernels_to_bytes(&k, false);
        assert!(kernels_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn trace_csv_roundtrip() {
        let trace = SimTrace {
            dt: 0.5,
            n_neg: 2,
            n_u: 1,
            n_f: 1,
            n_dt: 0,
            n_db: 0,
            y: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            u: vec![0.5, 0.25, 0.125],
            f: vec![0.0, 1.0, 2.0],
            d_tilde: vec![],
            d_bar: vec![],
            states: None,
        };
        let text = trace_to_csv(&trace);
        let back = trace_from_csv(&text).unwrap();
        assert_eq!(back.n_neg, 2);
        assert_eq!(back.y, trace.y);
        assert_eq!(back.u, trace.u);
        assert_eq!(back.f, trace.f);
        assert!((back.dt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_rejects_nonuniform_and_missing_columns() {
        assert!(trace_from_csv("a,b\n1,2\n").is_err());
        assert!(trace_from_csv("t,y1\n0,1\n0.5,2\n1.7,3\n").is_err());
        assert!(trace_from_csv("t,y1\n0,1\n").is_err());
        assert!(trace_from_csv("t,y1\n0,1\n0.5,nope\n").is_err());
    }

    #[test]
    fn backstepping_dump_roundtrip() {
        let pair = BacksteppingKernelPair {
            n: 3,
            n_x: 2,
            n_neg: 1,
            k: (0..36).map(|i| i as f64).collect(),
            k_inv: (0..36).map(|i| -(i as f64)).collect(),
            a0_tilde: crate::grid::TabulatedMatrix::zeros(3, 2, 1),
            target_a0: crate::grid::TabulatedMatrix::zeros(3, 2, 1),
            iterations: 1,
            final_increment: 0.0,
            inverse_iterations: 1,
            inverse_increment: 0.0,
        };
        let bytes = backstepping_to_bytes(&pair);
        let (n, n_x, n_neg, k, k_inv) = backstepping_from_bytes(&bytes).unwrap();
        assert_eq!((n, n_x, n_neg), (3, 2, 1));
        assert_eq!(k, pair.k);
        assert_eq!(k_inv, pair.k_inv);
    }
}
