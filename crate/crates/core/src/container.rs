//! Little-endian binary container for simulated paths, optionally followed
//! by a section of field snapshots on a uniform grid.
//!
//! ```text
//! header   magic "ZKPB" | version u16 | d u16 | d1 u16 | m u16 | steps u32   (16 bytes)
//!          dt f64 | seed u64
//! payload  x[(steps+1)·d] | y[(steps+1)·(d1-d)] | dw[steps·m]                 (f64)
//! fields   "FLD1" | dim u32 | n u32 | half_width f64 | count u32
//!          count × (t f64 | values[n^dim] f64)                                 (optional)
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::sde_sim::PathBundle;

pub const MAGIC: &[u8; 4] = b"ZKPB";
pub const FIELD_TAG: &[u8; 4] = b"FLD1";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a path container (magic {0:?})")]
    Magic([u8; 4]),
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("dimension {what} = {value} does not fit the header")]
    TooLarge { what: &'static str, value: usize },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Snapshots of a scalar field on the uniform grid `[-L, L]^dim` with `n`
/// nodes per axis, stored node-major with the first axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSection {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

fn put_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 8);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn get_f64s<R: Read>(r: &mut R, len: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn get<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn narrow<T: TryFrom<usize>>(what: &'static str, value: usize) -> Result<T, ContainerError> {
    T::try_from(value).map_err(|_| ContainerError::TooLarge { what, value })
}

pub fn write<W: Write>(
    mut w: W,
    paths: &PathBundle,
    fields: Option<&FieldSection>,
) -> Result<(), ContainerError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&narrow::<u16>("d", paths.d)?.to_le_bytes())?;
    w.write_all(&narrow::<u16>("d1", paths.d1())?.to_le_bytes())?;
    w.write_all(&narrow::<u16>("m", paths.m)?.to_le_bytes())?;
    w.write_all(&narrow::<u32>("steps", paths.steps())?.to_le_bytes())?;
    w.write_all(&paths.dt.to_le_bytes())?;
    w.write_all(&paths.seed.to_le_bytes())?;
    put_f64s(&mut w, &paths.x)?;
    put_f64s(&mut w, &paths.y)?;
    put_f64s(&mut w, &paths.dw)?;
    if let Some(f) = fields {
        let size = f.n.pow(f.dim as u32);
        if f.times.len() != f.values.len() || f.values.iter().any(|v| v.len() != size) {
            return Err(ContainerError::Malformed(
                "field snapshots do not match the grid".into(),
            ));
        }
        w.write_all(FIELD_TAG)?;
        w.write_all(&narrow::<u32>("dim", f.dim)?.to_le_bytes())?;
        w.write_all(&narrow::<u32>("n", f.n)?.to_le_bytes())?;
        w.write_all(&f.half_width.to_le_bytes())?;
        w.write_all(&narrow::<u32>("count", f.times.len())?.to_le_bytes())?;
        for (t, v) in f.times.iter().zip(&f.values) {
            w.write_all(&t.to_le_bytes())?;
            put_f64s(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<(PathBundle, Option<FieldSection>), ContainerError> {
    let magic = get::<4, _>(&mut r)?;
    if &magic != MAGIC {
        return Err(ContainerError::Magic(magic));
    }
    let version = u16::from_le_bytes(get(&mut r)?);
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let d = u16::from_le_bytes(get(&mut r)?) as usize;
    let d1 = u16::from_le_bytes(get(&mut r)?) as usize;
    let m = u16::from_le_bytes(get(&mut r)?) as usize;
    let steps = u32::from_le_bytes(get(&mut r)?) as usize;
    if d1 < d {
        return Err(ContainerError::Malformed(format!("d1 = {d1} < d = {d}")));
    }
    let dt = f64::from_le_bytes(get(&mut r)?);
    let seed = u64::from_le_bytes(get(&mut r)?);
    let k = d1 - d;
    let x = get_f64s(&mut r, (steps + 1) * d)?;
    let y = get_f64s(&mut r, (steps + 1) * k)?;
    let dw = get_f64s(&mut r, steps * m)?;
    let paths = PathBundle {
        d,
        k,
        m,
        dt,
        seed,
        x,
        y,
        dw,
    };
    let mut tag = [0u8; 4];
    let got = read_up_to(&mut r, &mut tag)?;
    if got == 0 {
        return Ok((paths, None));
    }
    if got < 4 || &tag != FIELD_TAG {
        return Err(ContainerError::Malformed(
            "trailing bytes after payload".into(),
        ));
    }
    let dim = u32::from_le_bytes(get(&mut r)?) as usize;
    let n = u32::from_le_bytes(get(&mut r)?) as usize;
    let half_width = f64::from_le_bytes(get(&mut r)?);
    let count = u32::from_le_bytes(get(&mut r)?) as usize;
    let size = n
        .checked_pow(dim as u32)
        .ok_or_else(|| ContainerError::Malformed("grid too large".into()))?;
    let mut times = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        times.push(f64::from_le_bytes(get(&mut r)?));
        values.push(get_f64s(&mut r, size)?);
    }
    Ok((
        paths,
        Some(FieldSection {
            dim,
            n,
            half_width,
            times,
            values,
        }),
    ))
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PathBundle {
        PathBundle {
            d: 1,
            k: 1,
            m: 2,
            dt: 0.1,
            seed: 42,
            x: vec![0.0, 1.5, -2.25],
            y: vec![f64::MIN_POSITIVE, 3.0, 1e300],
            dw: vec![0.1, -0.2, 0.3, -0.4],
        }
    }

    #[test]
    fn header_is_sixteen_bytes_and_round_trips() {
        let p = tiny();
        let mut buf = Vec::new();
        write(&mut buf, &p, None).unwrap();
        assert_eq!(buf.len(), 16 + 16 + 8 * (3 + 3 + 4));
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        let (q, f) = read(&buf[..]).unwrap();
        assert_eq!(q, p);
        assert!(f.is_none());
    }

    #[test]
    fn field_section_round_trips() {
        let p = tiny();
        let f = FieldSection {
            dim: 2,
            n: 3,
            half_width: 1.0,
            times: vec![0.0, 0.5],
            values: vec![(0..9).map(|i| i as f64).collect(), vec![-1.0; 9]],
        };
        let mut buf = Vec::new();
        write(&mut buf, &p, Some(&f)).unwrap();
        let (q, g) = read(&buf[..]).unwrap();
        assert_eq!(q, p);
        assert_eq!(g.unwrap(), f);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            read(&b"NOPE0000000000000000"[..]),
            Err(ContainerError::Magic(_))
        ));
        let mut buf = Vec::new();
        write(&mut buf, &tiny(), None).unwrap();
        buf.extend_from_slice(b"xy");
        assert!(matches!(read(&buf[..]), Err(ContainerError::Malformed(_))));
    }
}
