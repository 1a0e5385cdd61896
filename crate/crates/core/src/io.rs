//! File formats: `IMASK v1` instance masks, binary PPM/PGM images and
//! `PMAP v1` probability maps.
//!
//! Every writer emits a canonical form that its reader maps back to the same
//! bytes.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMask};
use crate::net::ProbabilityMaps;
use crate::tensor::Tensor;

fn bad(format: &'static str, msg: impl Into<String>) -> Error {
    Error::Format {
        format,
        msg: msg.into(),
    }
}

pub fn write_imask<W: Write>(out: &mut W, mask: &InstanceMask) -> Result<()> {
    let (w, h) = (mask.width(), mask.height());
    let mut s = format!("IMASK v1 {w} {h}\n");
    for row in mask.labels().chunks(w.max(1)).take(h) {
        let line: Vec<String> = row.iter().map(u32::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_imask<R: BufRead>(input: &mut R) -> Result<InstanceMask> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| bad("IMASK", format!("not readable text: {e}")))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("IMASK", "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "IMASK" || fields[1] != "v1" {
        return Err(bad("IMASK", format!("bad header {header:?}")));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("IMASK", format!("bad dimension {s:?}")));
    let (w, h) = (dim(fields[2])?, dim(fields[3])?);
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        let line = lines
            .next()
            .ok_or_else(|| bad("IMASK", format!("expected {h} rows, found {y}")))?;
        let before = labels.len();
        for v in line.split_whitespace() {
            labels.push(
                v.parse::<u32>()
                    .map_err(|_| bad("IMASK", format!("row {}: bad label {v:?}", y + 1)))?,
            );
        }
        if labels.len() - before != w {
            return Err(bad("IMASK", format!("row {} has {} values, expected {w}", y + 1, labels.len() - before)));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("IMASK", "trailing data after the last row"));
    }
    InstanceMask::from_labels(w, h, labels)
}

/// Binary masks are written as instance masks with labels 0/1.
pub fn write_binary_mask<W: Write>(out: &mut W, mask: &BinaryMask) -> Result<()> {
    let labels = mask.bits().iter().map(|&b| b as u32).collect();
    write_imask(out, &InstanceMask::from_labels(mask.width(), mask.height(), labels)?)
}

pub fn read_binary_mask<R: BufRead>(input: &mut R) -> Result<BinaryMask> {
    let m = read_imask(input)?;
    if m.labels().iter().any(|&l| l > 1) {
        return Err(bad("IMASK", "binary mask contains labels other than 0 and 1"));
    }
    Ok(m.foreground())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `(1, 3, H, W)` tensor as P6 or `(1, 1, H, W)` as P5, values in
/// [0, 1] scaled to 8 bits.
pub fn write_pnm<W: Write>(out: &mut W, image: &Tensor) -> Result<()> {
    let (c, h, w) = (image.c(), image.h(), image.w());
    let magic = match (image.n(), c) {
        (1, 3) => "P6",
        (1, 1) => "P5",
        _ => return Err(Error::Shape(format!("cannot write image of shape {:?}", image.shape()))),
    };
    let mut buf = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                buf.push(quantize(image.at(0, ch, y, x)));
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<R: BufRead>(input: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            return Err(bad("PNM", "truncated header"));
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                input.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return Ok(String::from_utf8_lossy(&tok).into_owned());
                }
            }
            b => tok.push(b),
        }
    }
}

/// Reads a binary P6 (3 channels) or P5 (1 channel) image with maxval 255.
pub fn read_pnm<R: BufRead>(input: &mut R) -> Result<Tensor> {
    let magic = header_token(input)?;
    let c = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(bad("PNM", format!("unsupported magic {m:?}"))),
    };
    let mut num = || -> Result<usize> {
        let t = header_token(input)?;
        t.parse().map_err(|_| bad("PNM", format!("bad header value {t:?}")))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(bad("PNM", format!("maxval {maxval} unsupported, expected 255")));
    }
    let mut bytes = vec![0u8; w * h * c];
    input
        .read_exact(&mut bytes)
        .map_err(|_| bad("PNM", "pixel data truncated"))?;
    Ok(Tensor::from_fn([1, c, h, w], |_, ch, y, x| bytes[(y * w + x) * c + ch] as f64 / 255.0))
}

/// Repeats a single-channel image to `channels`, or checks the count.
pub fn to_channels(image: Tensor, channels: usize) -> Result<Tensor> {
    if image.c() == channels {
        return Ok(image);
    }
    if image.c() != 1 {
        return Err(Error::Shape(format!("image has {} channels, expected {channels}", image.c())));
    }
    Ok(Tensor::from_fn([image.n(), channels, image.h(), image.w()], |n, _, y, x| {
        image.at(n, 0, y, x)
    }))
}

pub fn write_pmap<W: Write>(out: &mut W, maps: &ProbabilityMaps) -> Result<()> {
    let mut buf = format!("PMAP v1 {} {}\n", maps.width, maps.height).into_bytes();
    for v in maps.p_o.iter().chain(&maps.p_c) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_pmap<R: BufRead>(input: &mut R) -> Result<ProbabilityMaps> {
    let mut header = Vec::new();
    input.read_until(b'\n', &mut header)?;
    let header = String::from_utf8_lossy(&header);
    let fields: Vec<&str> = header.trim_end_matches('\n').split(' ').collect();
    if fields.len() != 4 || fields[0] != "PMAP" || fields[1] != "v1" {
        return Err(bad("PMAP", format!("bad header {:?}", header.trim_end())));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("PMAP", format!("bad dimension {s:?}")));
    let (w, h) = (dim(fields[2])?, dim(fields[3])?);
    let mut bytes = vec![0u8; 2 * w * h * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|_| bad("PMAP", "payload truncated"))?;
    let mut values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
    let p_o: Vec<f64> = values.by_ref().take(w * h).collect();
    let p_c: Vec<f64> = values.collect();
    if p_o.iter().chain(&p_c).any(|p| !(0.0..=1.0).contains(p)) {
        return Err(bad("PMAP", "probability outside [0, 1]"));
    }
    ProbabilityMaps::new(h, w, p_o, p_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imask_round_trip() {
        let m = InstanceMask::from_rows(&[&[0, 12, 12], &[3, 0, 0]]).unwrap();
        let mut bytes = Vec::new();
        write_imask(&mut bytes, &m).unwrap();
        assert_eq!(bytes, b"IMASK v1 3 2\n0 12 12\n3 0 0\n");
        assert_eq!(read_imask(&mut bytes.as_slice()).unwrap(), m);
        assert!(read_imask(&mut &b"IMASK v1 3 2\n0 1 1\n"[..]).is_err());
        assert!(read_imask(&mut &b"IMASK v1 2 1\n0 1 1\n"[..]).is_err());
        assert!(read_imask(&mut &b"IMASK v2 1 1\n0\n"[..]).is_err());
        assert!(read_binary_mask(&mut &b"IMASK v1 2 1\n0 2\n"[..]).is_err());
    }

    #[test]
    fn pnm_round_trip() {
        let img = Tensor::from_fn([1, 3, 2, 3], |_, c, y, x| ((c * 7 + y * 3 + x) * 11) as f64 / 255.0);
        let mut bytes = Vec::new();
        write_pnm(&mut bytes, &img).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let back = read_pnm(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, img);
        let mut again = Vec::new();
        write_pnm(&mut again, &back).unwrap();
        assert_eq!(bytes, again);

        let gray = b"P5\n# comment\n2 1\n255\n\x00\xff";
        let g = read_pnm(&mut &gray[..]).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
        assert_eq!(to_channels(g, 3).unwrap().shape(), [1, 3, 1, 2]);
    }

    #[test]
    fn pmap_round_trip() {
        let maps = ProbabilityMaps::new(1, 2, vec![0.25, 1.0], vec![0.0, 0.1]).unwrap();
        let mut bytes = Vec::new();
        write_pmap(&mut bytes, &maps).unwrap();
        assert!(bytes.starts_with(b"PMAP v1 2 1\n"));
        assert_eq!(bytes.len(), 12 + 32);
        let back = read_pmap(&mut bytes.as_slice()).unwrap();
        assert_eq!((back.p_o.clone(), back.p_c.clone()), (maps.p_o.clone(), maps.p_c.clone()));
        let mut again = Vec::new();
        write_pmap(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
        assert!(read_pmap(&mut &bytes[..20]).is_err());
    }
}
