//! Minimal `.npy` codec for the array kinds the dataset archives use:
//! unsigned bytes, little-endian integers, fixed-width unicode strings, and
//! pickled object arrays (returned as their raw pickle stream).

use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    U8(Vec<u8>),
    I64(Vec<i64>),
    Str(Vec<String>),
    /// Raw pickle payload of an object array.
    Object(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn into_i64(self, name: &str) -> Result<(Vec<usize>, Vec<i64>)> {
        match self.data {
            NpyData::I64(v) => Ok((self.shape, v)),
            NpyData::U8(v) => Ok((self.shape, v.into_iter().map(i64::from).collect())),
            _ => Err(Error::Data(format!("array `{name}` is not integer-typed"))),
        }
    }
}

struct Header {
    descr: String,
    fortran: bool,
    shape: Vec<usize>,
}

fn parse_header(text: &str) -> Result<Header> {
    let bad = || Error::Data(format!("unparseable npy header: {text}"));
    let field = |key: &str| -> Option<&str> {
        let at = text.find(&format!("'{key}'"))?;
        let rest = &text[at + key.len() + 2..];
        Some(rest[rest.find(':')? + 1..].trim_start())
    };
    let descr_raw = field("descr").ok_or_else(bad)?;
    let quote = descr_raw.chars().next().ok_or_else(bad)?;
    let descr = descr_raw[1..]
        .split(quote)
        .next()
        .ok_or_else(bad)?
        .to_string();
    let fortran = field("fortran_order").ok_or_else(bad)?.starts_with("True");
    let shape_raw = field("shape").ok_or_else(bad)?;
    let inner = &shape_raw[1..shape_raw.find(')').ok_or_else(bad)?];
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Header {
        descr,
        fortran,
        shape,
    })
}

pub fn read_npy<R: Read>(mut r: R) -> Result<NpyArray> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::Data(format!("npy: {e}")))?;
    if &magic[..6] != MAGIC {
        return Err(Error::Data("not an npy array".into()));
    }
    let header_len = if magic[6] == 1 {
        let mut b = [0u8; 2];
        r.read_exact(&mut b).map_err(|e| Error::Data(format!("npy: {e}")))?;
        u16::from_le_bytes(b) as usize
    } else {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|e| Error::Data(format!("npy: {e}")))?;
        u32::from_le_bytes(b) as usize
    };
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(|e| Error::Data(format!("npy: {e}")))?;
    let header = parse_header(&String::from_utf8_lossy(&header))?;
    if header.fortran && header.shape.len() > 1 {
        return Err(Error::Data("fortran-ordered arrays are not supported".into()));
    }
    let n: usize = header.shape.iter().product();
    let read_bytes = |r: &mut R, count: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; count];
        r.read_exact(&mut buf).map_err(|e| Error::Data(format!("npy payload: {e}")))?;
        Ok(buf)
    };
    let d = header.descr.as_str();
    let data = match d {
        "|u1" | "<u1" | "|b1" | "|i1" => NpyData::U8(read_bytes(&mut r, n)?),
        "<i8" | "<u8" => NpyData::I64(
            read_bytes(&mut r, 8 * n)?
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
        "<i4" | "<u4" => NpyData::I64(
            read_bytes(&mut r, 4 * n)?
                .chunks_exact(4)
                .map(|c| {
                    let b: [u8; 4] = c.try_into().expect("4 bytes");
                    if d == "<i4" {
                        i32::from_le_bytes(b) as i64
                    } else {
                        u32::from_le_bytes(b) as i64
                    }
                })
                .collect(),
        ),
        "|O" => {
            let mut rest = Vec::new();
            r.read_to_end(&mut rest).map_err(|e| Error::Data(format!("npy payload: {e}")))?;
            NpyData::Object(rest)
        }
        _ if d.starts_with("<U") => {
            let width: usize = d[2..]
                .parse()
                .map_err(|_| Error::Data(format!("bad descr {d}")))?;
            let raw = read_bytes(&mut r, 4 * width * n)?;
            NpyData::Str(
                raw.chunks_exact(4 * width)
                    .map(|s| {
                        s.chunks_exact(4)
                            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                            .take_while(|&c| c != 0)
                            .filter_map(char::from_u32)
                            .collect()
                    })
                    .collect(),
            )
        }
        other => return Err(Error::Data(format!("unsupported npy dtype {other}"))),
    };
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

pub fn write_npy<W: Write>(mut w: W, arr: &NpyArray) -> std::io::Result<()> {
    let (descr, payload): (String, Vec<u8>) = match &arr.data {
        NpyData::U8(v) => ("|u1".into(), v.clone()),
        NpyData::I64(v) => ("<i8".into(), v.iter().flat_map(|x| x.to_le_bytes()).collect()),
        NpyData::Str(v) => {
            let width = v.iter().map(|s| s.chars().count()).max().unwrap_or(1).max(1);
            let mut out = Vec::with_capacity(4 * width * v.len());
            for s in v {
                let mut chars: Vec<u32> = s.chars().map(u32::from).collect();
                chars.resize(width, 0);
                out.extend(chars.iter().flat_map(|c| c.to_le_bytes()));
            }
            (format!("<U{width}"), out)
        }
        NpyData::Object(_) => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::Unsupported,
                "object arrays are read-only",
            ))
        }
    };
    let shape = match arr.shape.len() {
        1 => format!("({},)", arr.shape[0]),
        _ => format!(
            "({})",
            arr.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header =
        format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    // pad so that magic + len + header is a multiple of 64, ending in '\n'
    let total = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&(header.len() as u16).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&payload)
}

/// Looks for the integer array stored under `key` in a pickled metadata
/// dictionary: the first raw byte string after the key whose length is
/// `8 * expected_len` is decoded as little-endian `i64`s.
pub fn scan_pickled_int_array(pickle: &[u8], key: &str, expected_len: usize) -> Option<Vec<i64>> {
    let start = find(pickle, key.as_bytes())? + key.len();
    let want = 8 * expected_len;
    let mut i = start;
    while i < pickle.len() {
        let op = pickle[i];
        let (len, hdr) = match op {
            // SHORT_BINSTRING, SHORT_BINBYTES, SHORT_BINUNICODE
            b'U' | b'C' | 0x8c if i + 1 < pickle.len() => (pickle[i + 1] as usize, 2),
            // BINSTRING, BINBYTES, BINUNICODE
            b'T' | b'B' | b'X' if i + 4 < pickle.len() => (
                u32::from_le_bytes(pickle[i + 1..i + 5].try_into().ok()?) as usize,
                5,
            ),
            _ => {
                i += 1;
                continue;
            }
        };
        let body = pickle.get(i + hdr..i + hdr + len);
        if let Some(body) = body {
            // protocol-2 pickles from python 3 carry bytes as latin-1 text
            let bytes: Option<Vec<u8>> = if matches!(op, b'X' | 0x8c) {
                std::str::from_utf8(body)
                    .ok()
                    .and_then(|s| s.chars().map(|c| u8::try_from(u32::from(c)).ok()).collect())
            } else {
                Some(body.to_vec())
            };
            if let Some(bytes) = bytes.filter(|b| b.len() == want) {
                return Some(
                    bytes
                        .chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                );
            }
        }
        i += 1;
    }
    None
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for arr in [
            NpyArray {
                shape: vec![2, 3],
                data: NpyData::U8(vec![0, 1, 2, 3, 4, 5]),
            },
            NpyArray {
                shape: vec![3],
                data: NpyData::I64(vec![-1, 40, 1 << 40]),
            },
            NpyArray {
                shape: vec![2],
                data: NpyData::Str(vec!["pos_x".into(), "size".into()]),
            },
        ] {
            let mut buf = Vec::new();
            write_npy(&mut buf, &arr).unwrap();
            assert_eq!((buf.len() - arr_payload_len(&arr)) % 64, 0);
            assert_eq!(read_npy(&buf[..]).unwrap(), arr);
        }
    }

    fn arr_payload_len(a: &NpyArray) -> usize {
        match &a.data {
            NpyData::U8(v) => v.len(),
            NpyData::I64(v) => 8 * v.len(),
            NpyData::Str(v) => {
                4 * v.len() * v.iter().map(|s| s.chars().count()).max().unwrap_or(1)
            }
            NpyData::Object(v) => v.len(),
        }
    }

    #[test]
    fn header_variants() {
        let h = parse_header("{'descr': '<i8', 'fortran_order': False, 'shape': (737280L, 6L), }")
            .unwrap();
        assert_eq!(h.shape, vec![737280, 6]);
        assert_eq!(h.descr, "<i8");
        let h = parse_header("{'descr': '|O', 'fortran_order': False, 'shape': (), }").unwrap();
        assert!(h.shape.is_empty());
    }

    #[test]
    fn scans_short_binbytes() {
        let mut p = b"\x80\x03}q\x00X\x0d\x00\x00\x00latents_sizesq\x01".to_vec();
        p.extend_from_slice(b"U\x02<i8");
        p.push(b'C');
        p.push(16);
        p.extend(3i64.to_le_bytes());
        p.extend(40i64.to_le_bytes());
        assert_eq!(scan_pickled_int_array(&p, "latents_sizes", 2), Some(vec![3, 40]));
        assert_eq!(scan_pickled_int_array(&p, "latents_sizes", 3), None);
        assert_eq!(scan_pickled_int_array(&p, "missing", 2), None);
    }
}
