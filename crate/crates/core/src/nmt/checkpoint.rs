//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic "TAGMTCKP" | u32 version
//! u32 len | config text ("key = value" lines)
//! vocabulary ×2 (source, target): u32 count | count × (u32 len | utf-8)
//! u64 step
//! u32 tensors | tensors × (u32 len | name | u32 rows | u32 cols | rows·cols × f64)
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::config::ModelConfig;
use super::model::Model;
use super::vocab::Vocabulary;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"TAGMTCKP";
const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::data("checkpoint field exceeds u32"))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u32(r)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::data("checkpoint string is not utf-8"))
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config: String = model
        .config()
        .to_kv()
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    put_str(&mut w, &config)?;
    for vocab in [model.src_vocab(), model.tgt_vocab()] {
        put_u32(&mut w, vocab.symbols().len())?;
        for s in vocab.symbols() {
            put_str(&mut w, s)?;
        }
    }
    w.write_all(&(model.step as u64).to_le_bytes())?;
    let params = model.params();
    put_u32(&mut w, params.len())?;
    for id in params.ids() {
        let m = params.get(id);
        put_str(&mut w, params.name(id))?;
        put_u32(&mut w, m.nrows())?;
        put_u32(&mut w, m.ncols())?;
        for x in m.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::data("not a checkpoint file (bad magic)"));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION as usize {
        return Err(Error::data(format!("unsupported checkpoint version {version}")));
    }
    let text = get_str(&mut r)?;
    let kv: BTreeMap<String, String> = text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let config = ModelConfig::from_kv(&kv)?;
    let mut vocabs = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = get_u32(&mut r)?;
        let symbols = (0..n).map(|_| get_str(&mut r)).collect::<Result<Vec<_>>>()?;
        vocabs.push(Vocabulary::from_symbols(symbols));
    }
    let tgt = vocabs.pop().unwrap();
    let src = vocabs.pop().unwrap();
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let step = u64::from_le_bytes(b8) as usize;

    let mut model = Model::new(config, src, tgt, 0)?;
    model.step = step;
    let n = get_u32(&mut r)?;
    if n != model.params().len() {
        return Err(Error::data(format!(
            "checkpoint has {n} tensors, model expects {}",
            model.params().len()
        )));
    }
    for _ in 0..n {
        let name = get_str(&mut r)?;
        let rows = get_u32(&mut r)?;
        let cols = get_u32(&mut r)?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| Error::data(format!("unexpected tensor {name}")))?;
        if model.params().get(id).dim() != (rows, cols) {
            return Err(Error::data(format!("tensor {name} has shape {rows}x{cols}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        *model.params_mut().get_mut(id) =
            Array2::from_shape_vec((rows, cols), data).expect("shape checked above");
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
