//! Binary parameter snapshots.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! magic    8 bytes  "SPKRSNAP"
//! version  u32      1
//! spec_len u32, then spec_len bytes of NetworkSpec JSON (UTF-8)
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8, e.g. "layer1.w")
//!   rows u32, cols u32
//!   rows × cols f64 little-endian, row-major
//! ```
//!
//! Tensors appear in `NetworkParams::named_tensors` order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::SeededRng;
use crate::network::{NetworkParams, NetworkSpec};

pub const MAGIC: &[u8; 8] = b"SPKRSNAP";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(
        &u32::try_from(v)
            .expect("snapshot field fits in u32")
            .to_le_bytes(),
    );
}

pub fn encode(spec: &NetworkSpec, params: &NetworkParams) -> Result<Vec<u8>> {
    params.check_against(spec)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = spec.to_json();
    put_u32(&mut out, json.len());
    out.extend_from_slice(json.as_bytes());
    let tensors = params.named_tensors();
    put_u32(&mut out, tensors.len());
    for (name, _, m) in tensors {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, m.rows());
        put_u32(&mut out, m.cols());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Data(format!("snapshot truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn str(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Data(format!("snapshot {what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(NetworkSpec, NetworkParams)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Data("not a parameter snapshot (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Data(format!(
            "unsupported snapshot version {version}"
        )));
    }
    let spec = NetworkSpec::from_json(r.str("spec")?)
        .map_err(|e| Error::Data(format!("snapshot spec: {e}")))?;
    // Structure only; every value is overwritten below.
    let mut params = NetworkParams::init(&spec, &mut SeededRng::new(0))?;
    let expected: Vec<(String, usize, usize)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, _, m)| (n, m.rows(), m.cols()))
        .collect();
    let count = r.u32()?;
    if count != expected.len() {
        return Err(Error::Data(format!(
            "snapshot has {count} tensors, spec needs {}",
            expected.len()
        )));
    }
    for ((_, t), (name, rows, cols)) in params.tensors_mut().into_iter().zip(&expected) {
        let got = r.str("tensor name")?;
        let (gr, gc) = (r.u32()?, r.u32()?);
        if got != name || gr != *rows || gc != *cols {
            return Err(Error::Data(format!(
                "snapshot tensor {got} [{gr}x{gc}] where {name} [{rows}x{cols}] was expected"
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "snapshot tensor {name} holds a non-finite value"
                )));
            }
            *dst = v;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{} trailing bytes after snapshot",
            bytes.len() - r.pos
        )));
    }
    Ok((spec, params))
}

pub fn write(path: &Path, spec: &NetworkSpec, params: &NetworkParams) -> Result<()> {
    let bytes = encode(spec, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(NetworkSpec, NetworkParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
