//! NPY v1.0 reader/writer, restricted to little-endian f32 in C order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensorio::tensor::Tensor;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;
/// magic + version + u16 header length
const PREAMBLE: usize = 10;

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_npy(BufReader::new(file)).map_err(|e| e.with_context(&path.display().to_string()))
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_npy(t, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse only the header of an NPY file and return the declared shape.
pub fn read_shape(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_header(&mut r).map_err(|e| e.with_context(&path.display().to_string()))
}

pub fn read_npy<R: Read>(mut r: R) -> Result<Tensor> {
    let shape = read_header(&mut r)?;
    let count: usize = shape.iter().product();
    let mut bytes = Vec::with_capacity(count * 4);
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("reading payload: {e}")))?;
    if bytes.len() != count * 4 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            bytes.len(),
            count * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_npy<W: Write>(t: &Tensor, w: &mut W) -> std::io::Result<()> {
    let shape = match t.shape() {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    let total = PREAMBLE + header.len() + 1;
    let pad = (ALIGN - total % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&(header.len() as u16).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let mut pre = [0u8; PREAMBLE];
    r.read_exact(&mut pre)
        .map_err(|_| Error::Format("file shorter than the NPY preamble".into()))?;
    if &pre[..6] != MAGIC {
        return Err(Error::Format("bad magic string".into()));
    }
    if pre[6] != 1 || pre[7] != 0 {
        return Err(Error::UnsupportedFormat(format!(
            "NPY version {}.{} (only 1.0 is read)",
            pre[6], pre[7]
        )));
    }
    let len = u16::from_le_bytes([pre[8], pre[9]]) as usize;
    let mut raw = vec![0u8; len];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let text =
        std::str::from_utf8(&raw).map_err(|_| Error::Format("header is not ASCII".into()))?;
    let header = parse_header(text)?;

    match header.descr.as_deref() {
        Some("<f4") => {}
        Some(other) => {
            return Err(Error::UnsupportedFormat(format!(
                "dtype '{other}' (only '<f4' is read)"
            )))
        }
        None => return Err(Error::Format("header has no 'descr'".into())),
    }
    match header.fortran_order {
        Some(false) => {}
        Some(true) => return Err(Error::UnsupportedFormat("Fortran-ordered array".into())),
        None => return Err(Error::Format("header has no 'fortran_order'".into())),
    }
    let shape = header
        .shape
        .ok_or_else(|| Error::Format("header has no 'shape'".into()))?;
    if shape.len() > super::tensor::MAX_RANK {
        return Err(Error::UnsupportedFormat(format!("rank {}", shape.len())));
    }
    Ok(shape)
}

#[derive(Default)]
struct Header {
    descr: Option<String>,
    fortran_order: Option<bool>,
    shape: Option<Vec<usize>>,
}

/// Parse the Python dict literal numpy writes, e.g.
/// `{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }`.
fn parse_header(text: &str) -> Result<Header> {
    let mut p = Cursor {
        s: text.trim_end().as_bytes(),
        i: 0,
    };
    let mut h = Header::default();
    p.expect(b'{')?;
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.skip_ws();
        p.expect(b':')?;
        p.skip_ws();
        match key.as_str() {
            "descr" => h.descr = Some(p.string()?),
            "fortran_order" => h.fortran_order = Some(p.boolean()?),
            "shape" => h.shape = Some(p.tuple()?),
            other => return Err(Error::Format(format!("unexpected header key '{other}'"))),
        }
        p.skip_ws();
        if !p.eat(b',') {
            p.skip_ws();
            p.expect(b'}')?;
            break;
        }
    }
    p.skip_ws();
    if p.i != p.s.len() {
        return Err(Error::Format("trailing bytes after header dict".into()));
    }
    Ok(h)
}

struct Cursor<'a> {
    s: &'a [u8],
    i: usize,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected '{}' at header offset {}",
                c as char, self.i
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.s.get(self.i) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => {
                return Err(Error::Format(format!(
                    "expected string at offset {}",
                    self.i
                )))
            }
        };
        self.i += 1;
        let start = self.i;
        while self.i < self.s.len() && self.s[self.i] != quote {
            self.i += 1;
        }
        if self.i == self.s.len() {
            return Err(Error::Format("unterminated string in header".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.i]).into_owned();
        self.i += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool> {
        let rest = &self.s[self.i..];
        if rest.starts_with(b"True") {
            self.i += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.i += 5;
            Ok(false)
        } else {
            Err(Error::Format("expected True or False".into()))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                self.i += 1;
            }
            if start == self.i {
                return Err(Error::Format("expected integer in shape tuple".into()));
            }
            let digits = std::str::from_utf8(&self.s[start..self.i]).expect("ascii digits");
            dims.push(
                digits
                    .parse()
                    .map_err(|_| Error::Format(format!("dimension {digits} overflows")))?,
            );
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_bytes(dict: &str) -> Vec<u8> {
        let mut h = dict.to_string();
        let total = PREAMBLE + h.len() + 1;
        h.extend(std::iter::repeat_n(' ', (ALIGN - total % ALIGN) % ALIGN));
        h.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend([1, 0]);
        out.extend((h.len() as u16).to_le_bytes());
        out.extend(h.as_bytes());
        out
    }

    #[test]
    fn reads_hand_built_file() {
        let mut bytes = header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }");
        for v in 0..6 {
            bytes.extend((v as f32).to_le_bytes());
        }
        let t = read_npy(bytes.as_slice()).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn header_is_aligned() {
        for shape in [vec![], vec![7], vec![2, 3], vec![1000, 1000, 3, 2]] {
            let n = shape.iter().product();
            let t = Tensor::new(shape, vec![1.0; n]).unwrap();
            let mut buf = Vec::new();
            write_npy(&t, &mut buf).unwrap();
            let hlen = u16::from_le_bytes([buf[8], buf[9]]) as usize;
            assert_eq!((PREAMBLE + hlen) % ALIGN, 0);
            assert_eq!(buf[PREAMBLE + hlen - 1], b'\n');
        }
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(7.0).unwrap();
        let mut buf = Vec::new();
        write_npy(&t, &mut buf).unwrap();
        let back = read_npy(buf.as_slice()).unwrap();
        assert_eq!(back.shape(), &[] as &[usize]);
        assert_eq!(back.data(), &[7.0]);
    }

    #[test]
    fn rejects_f64_and_fortran() {
        let mut f8 = header_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }");
        f8.extend(1.0f64.to_le_bytes());
        assert!(matches!(
            read_npy(f8.as_slice()),
            Err(Error::UnsupportedFormat(_))
        ));

        let mut fo = header_bytes("{'descr': '<f4', 'fortran_order': True, 'shape': (1,), }");
        fo.extend(1.0f32.to_le_bytes());
        assert!(matches!(
            read_npy(fo.as_slice()),
            Err(Error::UnsupportedFormat(_))
        ));

        let mut be = header_bytes("{'descr': '>f4', 'fortran_order': False, 'shape': (1,), }");
        be.extend(1.0f32.to_be_bytes());
        assert!(matches!(
            read_npy(be.as_slice()),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(
            read_npy(&b"\x93NUMPZ\x01\x00"[..]),
            Err(Error::Format(_))
        ));
        let bad = header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (2, }");
        assert!(matches!(read_npy(bad.as_slice()), Err(Error::Format(_))));
        // truncated payload
        let mut short = header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }");
        short.extend(1.0f32.to_le_bytes());
        assert!(matches!(read_npy(short.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_nan_payload() {
        let mut bytes = header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }");
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(f32::INFINITY.to_le_bytes());
        assert!(matches!(read_npy(bytes.as_slice()), Err(Error::Data(_))));
    }

    #[test]
    fn key_order_is_free() {
        let mut bytes =
            header_bytes("{\"shape\": (1,), \"fortran_order\": False, \"descr\": \"<f4\"}");
        bytes.extend(2.5f32.to_le_bytes());
        assert_eq!(read_npy(bytes.as_slice()).unwrap().data(), &[2.5]);
    }
}
