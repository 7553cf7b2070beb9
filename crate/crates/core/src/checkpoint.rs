//! Flat binary serialization for network parameters.
//!
//! A bundle holds any number of named networks. All integers and floats are
//! little-endian:
//!
//! ```text
//! magic   b"DNB1"
//! u32     number of networks
//! per network:
//!   u32       name length, then that many UTF-8 bytes
//!   u32       layer count
//!   per layer: u32 input width, u32 output width, u8 activation tag
//!              (0 = linear, 1 = ELU, 2 = tanh)
//!   u64       parameter count
//!   f64 * n   parameters, weights row-major then biases, layer by layer
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::nn::{Activation, DenseNet};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DNB1";

pub fn write_bundle(path: &Path, nets: &[(&str, &DenseNet)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for (name, net) in nets {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let dims = net.layer_dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for (inw, outw, act) in &dims {
            w.write_all(&(*inw as u32).to_le_bytes())?;
            w.write_all(&(*outw as u32).to_le_bytes())?;
            w.write_all(&[act.tag()])?;
        }
        w.write_all(&(net.param_count() as u64).to_le_bytes())?;
        for p in net.params() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<Vec<(String, DenseNet)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::MalformedCheckpoint(format!(
            "bad magic {magic:02x?}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 1 << 20 {
            return Err(Error::MalformedCheckpoint("oversized name".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::MalformedCheckpoint("name is not UTF-8".into()))?;
        let layers = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(layers);
        for _ in 0..layers {
            let inw = read_u32(&mut r)? as usize;
            let outw = read_u32(&mut r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            dims.push((inw, outw, Activation::from_tag(tag[0])?));
        }
        let n_params = read_u64(&mut r)? as usize;
        let expected: usize = dims.iter().map(|(i, o, _)| i * o + o).sum();
        if n_params != expected {
            return Err(Error::MalformedCheckpoint(format!(
                "parameter count {n_params} does not match layer dims ({expected})"
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        let mut buf = [0u8; 8];
        for _ in 0..n_params {
            r.read_exact(&mut buf)?;
            params.push(f64::from_le_bytes(buf));
        }
        out.push((name, DenseNet::from_parts(&dims, params)?));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a =
            DenseNet::random(&[3, 5, 2], &[Activation::Elu, Activation::Linear], &mut rng).unwrap();
        let b = DenseNet::random(
            &[1, 4, 1],
            &[Activation::Tanh, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("crn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bundle.bin");
        write_bundle(&path, &[("actor.0", &a), ("critic.0.1", &b)]).unwrap();
        let loaded = read_bundle(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "actor.0");
        assert_eq!(loaded[0].1.params(), a.params());
        assert_eq!(loaded[0].1.layer_dims(), a.layer_dims());
        assert_eq!(loaded[1].0, "critic.0.1");
        assert_eq!(loaded[1].1.params(), b.params());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_bundle_is_rejected() {
        let dir = std::env::temp_dir().join(format!("crn-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.bin");
        std::fs::write(&path, b"DNB1\x01\x00\x00\x00\x05").unwrap();
        assert!(read_bundle(&path).is_err());
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(read_bundle(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
