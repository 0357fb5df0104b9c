//! Plain-text network checkpoints.
//!
//! ```text
//! recognition-net v1
//! sizes 4 8 6
//! output 3 2
//! weight 0 8 4
//! <8·4 floats, row-major, whitespace separated>
//! bias 0 8
//! <8 floats>
//! ...
//! ```
//! Floats are written in shortest round-trip form, so save/load is exact for `f64`.

use std::cell::Cell;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::RecognitionNet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "recognition-net v1";

pub fn write_checkpoint<T: Scalar, W: Write>(net: &RecognitionNet<T>, mut out: W) -> Result<()> {
    let sizes = net.sizes();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "sizes {}", sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "))?;
    let (p, f) = net.output_shape();
    writeln!(out, "output {p} {f}")?;
    for l in 0..net.num_layers() {
        writeln!(out, "weight {l} {} {}", sizes[l + 1], sizes[l])?;
        for row in net.weights(l).chunks(sizes[l]) {
            writeln!(out, "{}", row.iter().map(|v| format!("{:e}", v.as_f64())).collect::<Vec<_>>().join(" "))?;
        }
        writeln!(out, "bias {l} {}", sizes[l + 1])?;
        writeln!(out, "{}", net.bias(l).iter().map(|v| format!("{:e}", v.as_f64())).collect::<Vec<_>>().join(" "))?;
    }
    Ok(())
}

fn parse_err(token: usize, message: impl Into<String>) -> Error {
    Error::Parse { location: format!("token {token}"), message: message.into() }
}

pub fn read_checkpoint<T: Scalar>(text: &str) -> Result<RecognitionNet<T>> {
    let body = text
        .strip_prefix(MAGIC)
        .ok_or_else(|| parse_err(0, format!("missing header '{MAGIC}'")))?;
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let cursor = Cell::new(0usize);
    let next = |what: &str| -> Result<&str> {
        let at = cursor.get();
        let t = tokens.get(at).copied().ok_or_else(|| parse_err(at, format!("unexpected end, wanted {what}")))?;
        cursor.set(at + 1);
        Ok(t)
    };
    let expect = |got: &str, want: &str, at: usize| -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(parse_err(at, format!("expected '{want}', found '{got}'")))
        }
    };
    let usize_of = |t: &str, at: usize| t.parse::<usize>().map_err(|e| parse_err(at, format!("'{t}': {e}")));
    let float_of = |t: &str, at: usize| t.parse::<f64>().map(T::of).map_err(|e| parse_err(at, format!("'{t}': {e}")));

    expect(next("sizes")?, "sizes", 0)?;
    let mut sizes = Vec::new();
    while tokens.get(cursor.get()).is_some_and(|t| *t != "output") {
        let at = cursor.get();
        sizes.push(usize_of(next("layer size")?, at)?);
    }
    expect(next("output")?, "output", cursor.get())?;
    let p = usize_of(next("P")?, cursor.get())?;
    let f = usize_of(next("F")?, cursor.get())?;
    let mut net = RecognitionNet::zeros(&sizes, p, f)?;
    let mut phi = Vec::with_capacity(net.num_params());
    for l in 0..net.num_layers() {
        for (kind, count) in [("weight", sizes[l] * sizes[l + 1]), ("bias", sizes[l + 1])] {
            let at = cursor.get();
            expect(next(kind)?, kind, at)?;
            if usize_of(next("layer index")?, cursor.get())? != l {
                return Err(parse_err(cursor.get(), format!("{kind} block out of order, expected layer {l}")));
            }
            let shape: Vec<usize> = if kind == "weight" {
                vec![usize_of(next("rows")?, cursor.get())?, usize_of(next("cols")?, cursor.get())?]
            } else {
                vec![usize_of(next("len")?, cursor.get())?]
            };
            if shape.iter().product::<usize>() != count {
                return Err(parse_err(cursor.get(), format!("{kind} {l} has shape {shape:?}, expected {count} values")));
            }
            for _ in 0..count {
                let at = cursor.get();
                phi.push(float_of(next("value")?, at)?);
            }
        }
    }
    if cursor.get() != tokens.len() {
        return Err(parse_err(cursor.get(), "trailing tokens"));
    }
    net.params_mut().copy_from_slice(&phi);
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &RecognitionNet<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<RecognitionNet<T>> {
    read_checkpoint(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::xavier_init;

    #[test]
    fn round_trip_is_exact() {
        let net: RecognitionNet<f64> = xavier_init(&[3, 5, 4], 2, 2, 17).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back: RecognitionNet<f64> = read_checkpoint(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.sizes(), net.sizes());
        assert_eq!(back.output_shape(), net.output_shape());
        assert_eq!(back.params(), net.params());
    }

    #[test]
    fn malformed_input_is_located() {
        let bad = "recognition-net v1\nsizes 2 2\noutput 2 1\nweight 0 2 2\n1 2 x 4\nbias 0 2\n0 0\n";
        match read_checkpoint::<f64>(bad) {
            Err(Error::Parse { location, .. }) => assert!(location.contains("token")),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(read_checkpoint::<f64>("nope").is_err());
        let short = "recognition-net v1\nsizes 2 2\noutput 2 1\nweight 0 2 2\n1 2 3\n";
        assert!(read_checkpoint::<f64>(short).is_err());
    }
}
