//! Tensor fixture files: a one-line text header `TENSOR i8 <h> <w> <c>`
//! followed by `h·w·c` raw bytes in HWC order.

use std::io::{BufRead, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub fn write_tensor<W: Write>(mut out: W, t: &Tensor) -> Result<()> {
    writeln!(out, "TENSOR i8 {} {} {}", t.h, t.w, t.c)?;
    out.write_all(&t.to_bytes())?;
    Ok(())
}

pub fn read_tensor<R: BufRead>(mut r: R) -> Result<Tensor> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 5 || f[0] != "TENSOR" {
        return Err(Error::Tensor(format!("bad fixture header `{}`", line.trim_end())));
    }
    if f[1] != "i8" {
        return Err(Error::Tensor(format!("unsupported element format `{}`", f[1])));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Tensor(format!("bad dimension `{s}`")));
    let (h, w, c) = (dim(f[2])?, dim(f[3])?, dim(f[4])?);
    let mut data = vec![0u8; h * w * c];
    r.read_exact(&mut data).map_err(|_| Error::Tensor(format!("fixture truncated: expected {} bytes", h * w * c)))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Tensor(format!("{} trailing bytes after tensor data", rest.len())));
    }
    Tensor::from_vec(h, w, c, data.into_iter().map(|b| b as i8).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = Tensor::random(3, 4, 5, 9);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(buf.starts_with(b"TENSOR i8 3 4 5\n"));
        assert_eq!(read_tensor(&buf[..]).unwrap(), t);
        assert!(read_tensor(&buf[..buf.len() - 1]).is_err());
        assert!(read_tensor(&b"TENSOR f32 1 1 1\n\0\0\0\0"[..]).is_err());
    }
}
