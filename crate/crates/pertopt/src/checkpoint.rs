//! Flat, versioned text format for model checkpoints and single tensors.
//!
//! Values are written as the hex of their IEEE-754 bits, so a round trip is
//! bitwise exact. A model checkpoint records layer extents, the init seed,
//! and every parameter tensor:
//!
//! ```text
//! pertopt-checkpoint v1
//! extents 2 32 2
//! seed 7
//! tensor w0 2 2 32
//! 3fb99999a0000000 ...
//! ...
//! end
//! ```
//!
//! `pertopt-tensor v1` files carry one unnamed tensor with the same
//! encoding; probes use them to dump optimized inputs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{MlpClassifier, ModelParameters};
use crate::tensor::Tensor;

const MODEL_HEADER: &str = "pertopt-checkpoint v1";
const TENSOR_HEADER: &str = "pertopt-tensor v1";

fn write_tensor(out: &mut String, name: &str, tensor: &Tensor) {
    out.push_str(&format!("tensor {} {}", name, tensor.rank()));
    for extent in tensor.shape() {
        out.push_str(&format!(" {extent}"));
    }
    out.push('\n');
    let mut first = true;
    for v in tensor.data() {
        if !first {
            out.push(' ');
        }
        out.push_str(&format!("{:016x}", v.to_bits()));
        first = false;
    }
    out.push('\n');
}

pub fn save_model(model: &MlpClassifier, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(MODEL_HEADER);
    out.push('\n');
    out.push_str("extents");
    for e in model.extents() {
        out.push_str(&format!(" {e}"));
    }
    out.push('\n');
    out.push_str(&format!("seed {}\n", model.seed()));
    for (name, tensor) in model.parameters().iter() {
        write_tensor(&mut out, name, tensor);
    }
    out.push_str("end\n");
    fs::write(path, out)?;
    Ok(())
}

pub fn save_tensor(tensor: &Tensor, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(TENSOR_HEADER);
    out.push('\n');
    write_tensor(&mut out, "value", tensor);
    out.push_str("end\n");
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.lines
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("{}: unexpected end of file", self.path.display())))
    }

    fn fail<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Checkpoint(format!("{}: {}", self.path.display(), msg)))
    }
}

fn parse_usizes(fields: &[&str]) -> Result<Vec<usize>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad integer `{f}`")))
        })
        .collect()
}

fn read_tensor(reader: &mut Reader<'_>, header: &str) -> Result<(String, Tensor)> {
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 3 || fields[0] != "tensor" {
        return reader.fail(&format!("expected tensor header, got `{header}`"));
    }
    let name = fields[1].to_string();
    let rank: usize = fields[2]
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad rank `{}`", fields[2])))?;
    if fields.len() != 3 + rank {
        return reader.fail(&format!("tensor `{name}` header lists wrong extent count"));
    }
    let shape = parse_usizes(&fields[3..])?;
    let numel: usize = shape.iter().product();
    let data_line = reader.next()?;
    let mut data = Vec::with_capacity(numel);
    for word in data_line.split_whitespace() {
        let bits = u64::from_str_radix(word, 16)
            .map_err(|_| Error::Checkpoint(format!("bad value `{word}` in tensor `{name}`")))?;
        data.push(f64::from_bits(bits));
    }
    if data.len() != numel {
        return reader.fail(&format!(
            "tensor `{name}` has {} values, shape {:?} needs {}",
            data.len(),
            shape,
            numel
        ));
    }
    Ok((name, Tensor::new(shape, data)?))
}

pub fn load_model(path: &Path) -> Result<MlpClassifier> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))?;
    let mut reader = Reader {
        lines: text.lines(),
        path,
    };
    let header = reader.next()?;
    if header != MODEL_HEADER {
        return reader.fail(&format!("unsupported header `{header}`"));
    }
    let extents_line = reader.next()?;
    let fields: Vec<&str> = extents_line.split_whitespace().collect();
    if fields.first() != Some(&"extents") {
        return reader.fail("missing extents line");
    }
    let extents = parse_usizes(&fields[1..])?;
    let seed_line = reader.next()?;
    let seed: u64 = match seed_line.strip_prefix("seed ") {
        Some(s) => s
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad seed `{s}`")))?,
        None => return reader.fail("missing seed line"),
    };
    let mut params = ModelParameters::new();
    loop {
        let line = reader.next()?;
        if line == "end" {
            break;
        }
        let (name, tensor) = read_tensor(&mut reader, line)?;
        params.push(&name, tensor)?;
    }
    MlpClassifier::from_parts(extents, params, seed)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))?;
    let mut reader = Reader {
        lines: text.lines(),
        path,
    };
    let header = reader.next()?;
    if header != TENSOR_HEADER {
        return reader.fail(&format!("unsupported header `{header}`"));
    }
    let line = reader.next()?;
    let (_, tensor) = read_tensor(&mut reader, line)?;
    Ok(tensor)
}
