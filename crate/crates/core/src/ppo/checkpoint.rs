//! Flat binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "BMACPPO1"
//! heads        3 x u32  categorical head sizes
//! obs_dim      u32
//! for actor, then critic:
//!   n_layers   u32
//!   shapes     n_layers x (u32 inputs, u32 outputs)
//! payload      f64 values: input_scale, then for actor and critic each
//!              layer's weights (row-major, inputs x outputs) followed by its bias
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::network::{ActorCritic, Dense, Mlp};
use crate::Real;

pub const MAGIC: &[u8; 8] = b"BMACPPO1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a policy checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint holds a value the scalar type cannot represent")]
    Unrepresentable,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).expect("dimension fits in u32");
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64<R: Read, T: Real>(r: &mut R) -> Result<T, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    T::from_f64(f64::from_le_bytes(b)).ok_or(CheckpointError::Unrepresentable)
}

pub fn write<T: Real, W: Write>(ac: &ActorCritic<T>, w: &mut W) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    for h in ac.heads {
        put_u32(w, h)?;
    }
    put_u32(w, ac.obs_dim())?;
    for net in [&ac.actor, &ac.critic] {
        put_u32(w, net.layers.len())?;
        for (i, o) in net.shapes() {
            put_u32(w, i)?;
            put_u32(w, o)?;
        }
    }
    let mut put = |v: &T| w.write_all(&v.as_f64().to_le_bytes());
    for v in ac.input_scale.iter() {
        put(v)?;
    }
    for net in [&ac.actor, &ac.critic] {
        for l in &net.layers {
            // iterate in logical row-major order regardless of memory layout
            for v in l.w.rows().into_iter().flatten() {
                put(v)?;
            }
            for v in l.b.iter() {
                put(v)?;
            }
        }
    }
    Ok(())
}

pub fn read<T: Real, R: Read>(r: &mut R) -> Result<ActorCritic<T>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let heads = [get_u32(r)?, get_u32(r)?, get_u32(r)?];
    let obs_dim = get_u32(r)?;
    let mut shapes = Vec::new();
    for _ in 0..2 {
        let n = get_u32(r)?;
        if n == 0 || n > 64 {
            return Err(CheckpointError::Shape(format!("{n} layers")));
        }
        let mut s = Vec::with_capacity(n);
        for _ in 0..n {
            s.push((get_u32(r)?, get_u32(r)?));
        }
        shapes.push(s);
    }
    for (k, s) in shapes.iter().enumerate() {
        if s[0].0 != obs_dim || s.windows(2).any(|p| p[0].1 != p[1].0) {
            return Err(CheckpointError::Shape("layer widths do not chain".into()));
        }
        let out = s.last().unwrap().1;
        let want = if k == 0 { heads.iter().sum() } else { 1 };
        if out != want {
            return Err(CheckpointError::Shape(format!("output width {out}, expected {want}")));
        }
    }
    let mut scale = Vec::with_capacity(obs_dim);
    for _ in 0..obs_dim {
        scale.push(get_f64(r)?);
    }
    let mut nets = Vec::with_capacity(2);
    for s in &shapes {
        let mut layers = Vec::with_capacity(s.len());
        for &(i, o) in s {
            let mut w = Vec::with_capacity(i * o);
            for _ in 0..i * o {
                w.push(get_f64(r)?);
            }
            let mut b = Vec::with_capacity(o);
            for _ in 0..o {
                b.push(get_f64(r)?);
            }
            layers.push(Dense {
                w: Array2::from_shape_vec((i, o), w).expect("sized above"),
                b: Array1::from(b),
            });
        }
        nets.push(Mlp { layers });
    }
    let critic = nets.pop().unwrap();
    let actor = nets.pop().unwrap();
    Ok(ActorCritic { actor, critic, heads, input_scale: Array1::from(scale) })
}

pub fn save<T: Real>(ac: &ActorCritic<T>, path: &std::path::Path) -> Result<(), CheckpointError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(ac, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load<T: Real>(path: &std::path::Path) -> Result<ActorCritic<T>, CheckpointError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ac = ActorCritic::<f64>::new(16, &[12, 7], [5, 5, 3], &mut rng)
            .with_input_scale(Array1::from_shape_fn(16, |i| 1.0 / (i + 1) as f64));
        let mut buf = Vec::new();
        write(&ac, &mut buf).unwrap();
        let n_values = 16 + ac.actor.n_params() + ac.critic.n_params();
        assert_eq!(buf.len(), 8 + 12 + 4 + 2 * (4 + 3 * 8) + 8 * n_values);
        let back: ActorCritic<f64> = read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ac);
    }

    #[test]
    fn header_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ac = ActorCritic::<f64>::new(4, &[3], [2, 2, 3], &mut rng);
        let mut buf = Vec::new();
        write(&ac, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[24..28].try_into().unwrap()), 2);
        // first actor layer is 4 x 3
        assert_eq!(u32::from_le_bytes(buf[28..32].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[32..36].try_into().unwrap()), 3);
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(matches!(read::<f64, _>(&mut &b"NOTACKPT"[..]), Err(CheckpointError::BadMagic)));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ac = ActorCritic::<f64>::new(4, &[3], [2, 2, 3], &mut rng);
        let mut buf = Vec::new();
        write(&ac, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read::<f64, _>(&mut buf.as_slice()), Err(CheckpointError::Io(_))));
    }
}
