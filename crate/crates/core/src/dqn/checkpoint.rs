//! Binary network checkpoint, little-endian throughout:
//!
//! ```text
//! magic   b"FPQN"
//! version u32 (= 1)
//! count   u32             number of layer sizes
//! sizes   count x u32     e.g. 9 24 24 3
//! per layer: weights (outputs x inputs, row-major) f64, then bias f64
//! ```

use std::io::{Read, Write};

use super::network::{Dense, QNetwork};
use super::DqnError;

pub const MAGIC: &[u8; 4] = b"FPQN";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &QNetwork, mut out: W) -> Result<(), DqnError> {
    let sizes = net.sizes();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for s in &sizes {
        out.write_all(&(*s as u32).to_le_bytes())?;
    }
    for layer in net.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn to_bytes(net: &QNetwork) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, DqnError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> DqnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DqnError::Checkpoint("truncated checkpoint".into())
    } else {
        DqnError::Io(e.to_string())
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<QNetwork, DqnError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(DqnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(DqnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    if !(2..=64).contains(&count) {
        return Err(DqnError::Checkpoint(format!("implausible layer count {count}")));
    }
    let sizes = (0..count)
        .map(|_| read_u32(&mut input).map(|s| s as usize))
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
        return Err(DqnError::Checkpoint(format!("implausible sizes {sizes:?}")));
    }
    let mut layers = Vec::with_capacity(count - 1);
    let mut b = [0u8; 8];
    for w in sizes.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let mut values = Vec::with_capacity(inputs * outputs + outputs);
        for _ in 0..inputs * outputs + outputs {
            input.read_exact(&mut b).map_err(truncated)?;
            values.push(f64::from_le_bytes(b));
        }
        let bias = values.split_off(inputs * outputs);
        layers.push(Dense {
            inputs,
            outputs,
            weights: values,
            bias,
        });
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DqnError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    QNetwork::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let net = QNetwork::agent(9, 3, &mut rng).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..4], b"FPQN");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 * 4 + 8 * net.parameter_count());
        assert_eq!(read_checkpoint(bytes.as_slice()).unwrap(), net);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let bytes = to_bytes(&QNetwork::agent(6, 3, &mut rng).unwrap());
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(read_checkpoint(long.as_slice()).is_err());
    }
}
