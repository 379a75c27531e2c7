//! Binary token cache (`PTK1`).
//!
//! Little-endian layout:
//!
//! ```text
//! magic "PTK1" | version u32 = 1 | basis u32 | flags u32 | N u64 | K u32 | d u32
//! (K+1)·N·d f64 values in [k][node][channel] order
//! optimal basis only: per channel, K γ values then K+1 β values (f64)
//! ```
//!
//! Flag bit 0 marks Chebyshev tokens computed on the shifted Laplacian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::basis::{BasisKind, ChannelRecurrence, OptBasisCoeffs};
use crate::error::{Error, Result};
use crate::tokens::TokenTensor;

pub const TOKEN_MAGIC: &[u8; 4] = b"PTK1";
pub const TOKEN_VERSION: u32 = 1;
const FLAG_CHEB_SHIFTED: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 4 + 4;

/// Header fields of a token cache, readable without loading the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenHeader {
    pub basis: BasisKind,
    pub cheb_shifted: bool,
    pub n_nodes: usize,
    pub order: usize,
    pub dim: usize,
}

impl TokenHeader {
    fn payload_values(&self) -> Result<usize> {
        let main = (self.order + 1)
            .checked_mul(self.n_nodes)
            .and_then(|v| v.checked_mul(self.dim));
        let extra = if self.basis == BasisKind::Optimal {
            self.dim.checked_mul(2 * self.order + 1)
        } else {
            Some(0)
        };
        main.zip(extra)
            .and_then(|(a, b)| a.checked_add(b))
            .filter(|v| v.checked_mul(8).is_some())
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))
    }
}

pub fn encode_tokens(t: &TokenTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + t.data().len() * 8);
    buf.extend_from_slice(TOKEN_MAGIC);
    buf.extend_from_slice(&TOKEN_VERSION.to_le_bytes());
    buf.extend_from_slice(&t.basis().id().to_le_bytes());
    let flags = if t.cheb_shifted() { FLAG_CHEB_SHIFTED } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&(t.n_nodes() as u64).to_le_bytes());
    buf.extend_from_slice(&(t.order() as u32).to_le_bytes());
    buf.extend_from_slice(&(t.dim() as u32).to_le_bytes());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(opt) = t.opt_coeffs() {
        for ch in &opt.channels {
            for v in ch.gamma.iter().chain(&ch.beta) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated file while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn u32_at(bytes: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4, what)?.try_into().expect("4 bytes")))
}

pub fn decode_header(mut bytes: &[u8]) -> Result<TokenHeader> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != TOKEN_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"PTK1\"")));
    }
    let version = u32_at(&mut bytes, "version")?;
    if version != TOKEN_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let basis_id = u32_at(&mut bytes, "basis")?;
    let basis = BasisKind::from_id(basis_id)
        .ok_or_else(|| Error::Format(format!("unknown basis id {basis_id}")))?;
    let flags = u32_at(&mut bytes, "flags")?;
    if flags & !FLAG_CHEB_SHIFTED != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
    }
    let n = u64::from_le_bytes(take(&mut bytes, 8, "N")?.try_into().expect("8 bytes"));
    let n_nodes = usize::try_from(n).map_err(|_| Error::Format("N overflows usize".into()))?;
    let order = u32_at(&mut bytes, "K")? as usize;
    let dim = u32_at(&mut bytes, "d")? as usize;
    Ok(TokenHeader {
        basis,
        cheb_shifted: flags & FLAG_CHEB_SHIFTED != 0,
        n_nodes,
        order,
        dim,
    })
}

pub fn decode_tokens(bytes: &[u8]) -> Result<TokenTensor> {
    let header = decode_header(bytes)?;
    let total = header.payload_values()?;
    let mut rest = &bytes[HEADER_LEN..];
    if rest.len() != total * 8 {
        return Err(Error::Format(format!(
            "{} payload bytes, header implies {}",
            rest.len(),
            total * 8
        )));
    }
    let n_main = (header.order + 1) * header.n_nodes * header.dim;
    let mut read_f64s = |count: usize| -> Vec<f64> {
        let (head, tail) = rest.split_at(count * 8);
        rest = tail;
        head.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let data = read_f64s(n_main);
    let opt = if header.basis == BasisKind::Optimal {
        let channels = (0..header.dim)
            .map(|_| {
                let gamma = read_f64s(header.order);
                let beta = read_f64s(header.order + 1);
                let breakdown = beta.iter().position(|b| *b == 0.0);
                ChannelRecurrence {
                    gamma,
                    beta,
                    breakdown,
                }
            })
            .collect();
        Some(OptBasisCoeffs { channels })
    } else {
        None
    };
    TokenTensor::from_parts(
        header.basis,
        header.cheb_shifted,
        header.n_nodes,
        header.order,
        header.dim,
        data,
        opt,
    )
}

pub fn write_token_cache(t: &TokenTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_tokens(t))?;
    w.flush()?;
    Ok(())
}

pub fn read_token_cache(path: impl AsRef<Path>) -> Result<TokenTensor> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_tokens(&bytes)
}

/// Reads only the fixed-size header.
pub fn read_token_header(path: impl AsRef<Path>) -> Result<TokenHeader> {
    let mut buf = [0u8; HEADER_LEN];
    let mut f = File::open(path)?;
    let mut filled = 0;
    while filled < HEADER_LEN {
        let got = f.read(&mut buf[filled..])?;
        if got == 0 {
            break;
        }
        filled += got;
    }
    decode_header(&buf[..filled])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grid_graph;
    use crate::matrix::DenseMatrix;
    use crate::tokens::compute_tokens;

    fn sample(basis: BasisKind) -> TokenTensor {
        let g = grid_graph(3, 2).unwrap();
        let x = DenseMatrix::from_vec(6, 2, (0..12).map(|i| (i as f64 * 0.7).cos()).collect())
            .unwrap();
        compute_tokens(&g, &x, basis, 3, basis == BasisKind::Chebyshev).unwrap()
    }

    #[test]
    fn round_trip_all_bases() {
        for b in BasisKind::ALL {
            let t = sample(b);
            let bytes = encode_tokens(&t);
            let back = decode_tokens(&bytes).unwrap();
            assert_eq!(encode_tokens(&back), bytes);
            assert_eq!(back.basis(), b);
            assert_eq!(back.opt_coeffs(), t.opt_coeffs());
            assert!(back
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn minimal_tensor() {
        let t = TokenTensor::from_parts(BasisKind::Monomial, false, 1, 0, 1, vec![0.25], None)
            .unwrap();
        let bytes = encode_tokens(&t);
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(decode_tokens(&bytes).unwrap(), t);
    }

    #[test]
    fn corrupt_inputs_are_typed_errors() {
        let bytes = encode_tokens(&sample(BasisKind::Monomial));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tokens(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_tokens(&bad), Err(Error::Format(m)) if m.contains("version")));
        assert!(matches!(
            decode_tokens(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(decode_tokens(&bytes[..10]), Err(Error::Format(_))));
        let mut huge = bytes[..HEADER_LEN].to_vec();
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_tokens(&huge), Err(Error::Format(_))));
    }
}
