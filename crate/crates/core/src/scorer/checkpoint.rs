//! Binary scorer checkpoints: magic, `d: u32`, mode code `u8`, then the
//! flattened parameters as little-endian `f64`.

use std::io::{Read, Write};

use super::{Mode, ScorerError, ScorerParams};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PNSCR";

pub fn write_checkpoint<T: Real, W: Write>(params: &ScorerParams<T>, mut w: W) -> Result<(), ScorerError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(params.dim() as u32).to_le_bytes())?;
    w.write_all(&[params.mode.code()])?;
    for v in params.to_flat() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<ScorerParams<T>, ScorerError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ScorerError::Checkpoint("bad magic bytes".into()));
    }
    let mut d = [0u8; 4];
    r.read_exact(&mut d)?;
    let d = u32::from_le_bytes(d) as usize;
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let mode = Mode::from_code(code[0]).ok_or_else(|| ScorerError::Checkpoint(format!("unknown mode code {}", code[0])))?;
    let mut flat = Vec::with_capacity(2 * d + 2);
    let mut buf = [0u8; 8];
    for _ in 0..2 * d + 2 {
        r.read_exact(&mut buf).map_err(|_| ScorerError::Checkpoint("truncated parameter block".into()))?;
        let v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(ScorerError::Checkpoint("non-finite parameter".into()));
        }
        flat.push(T::lit(v));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(ScorerError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(ScorerParams::from_flat(&flat, mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = ScorerParams { attn_w: vec![0.5, -1.25], attn_b: 1e-9, gate_w: vec![3.0, 4.0], gate_b: -2.0, mode: Mode::CharacterHistory };
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 5 + 4 + 1 + 6 * 8);
        let q: ScorerParams<f64> = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(p, q);
        bytes.push(0);
        assert!(read_checkpoint::<f64, _>(bytes.as_slice()).is_err());
        assert!(read_checkpoint::<f64, _>(&b"PNSCX"[..]).is_err());
    }
}
