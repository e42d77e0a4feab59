//! Versioned binary checkpoints: magic string, format version, the
//! architecture config as a key-value text block, the vocabulary snapshot,
//! then little-endian parameter blobs with name/shape headers, followed by
//! the optimizer moments so interrupted runs resume exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::catalog::{Catalog, FeatureSpec, Vocabulary, ATTRIBUTES};
use crate::models::{ContextMode, Model, ModelConfig, ModelFamily};
use crate::nn::Tensor;

use super::HarnessError;

pub const MAGIC: &[u8] = b"OUTFITBENCH-CKPT\n";
pub const FORMAT_VERSION: u32 = 1;

fn err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

fn io(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source: e }
}

fn config_to_kv(config: &ModelConfig, completed_epochs: usize) -> BTreeMap<String, String> {
    let mut kv = BTreeMap::new();
    kv.insert("family".to_string(), config.family.as_str().to_string());
    kv.insert("d_model".to_string(), config.d_model.to_string());
    kv.insert("num_layers".to_string(), config.num_layers.to_string());
    kv.insert("num_heads".to_string(), config.num_heads.to_string());
    kv.insert("dropout".to_string(), format!("{}", config.dropout));
    kv.insert("lstm_hidden".to_string(), config.lstm_hidden.to_string());
    kv.insert("subnet_dim".to_string(), config.subnet_dim.to_string());
    kv.insert("batch_size".to_string(), config.batch_size.to_string());
    kv.insert("learning_rate".to_string(), format!("{}", config.learning_rate));
    kv.insert(
        "context_mode".to_string(),
        match config.context_mode {
            ContextMode::None => "none",
            ContextMode::Questionnaire => "questionnaire",
            ContextMode::ActionSequence => "action_sequence",
        }
        .to_string(),
    );
    kv.insert("encoder_positional".to_string(), config.encoder_positional.to_string());
    for attr in ATTRIBUTES {
        kv.insert(format!("attr_dim.{attr}"), config.feature_spec.dim(attr).to_string());
    }
    kv.insert("completed_epochs".to_string(), completed_epochs.to_string());
    kv
}

fn config_from_kv(kv: &BTreeMap<String, String>) -> Result<(ModelConfig, usize), HarnessError> {
    let get = |key: &str| kv.get(key).ok_or_else(|| err(format!("config block missing {key}")));
    let num = |key: &str| -> Result<usize, HarnessError> { get(key)?.parse().map_err(|_| err(format!("bad number for {key}"))) };
    let family = ModelFamily::parse(get("family")?).ok_or_else(|| err("unknown family"))?;
    let mut attr_dims = BTreeMap::new();
    for attr in ATTRIBUTES {
        attr_dims.insert(attr.to_string(), num(&format!("attr_dim.{attr}"))?);
    }
    let config = ModelConfig {
        family,
        d_model: num("d_model")?,
        num_layers: num("num_layers")?,
        num_heads: num("num_heads")?,
        dropout: get("dropout")?.parse().map_err(|_| err("bad dropout"))?,
        lstm_hidden: num("lstm_hidden")?,
        subnet_dim: num("subnet_dim")?,
        batch_size: num("batch_size")?,
        learning_rate: get("learning_rate")?.parse().map_err(|_| err("bad learning_rate"))?,
        context_mode: match get("context_mode")?.as_str() {
            "none" => ContextMode::None,
            "questionnaire" => ContextMode::Questionnaire,
            "action_sequence" => ContextMode::ActionSequence,
            other => return Err(err(format!("unknown context_mode {other}"))),
        },
        feature_spec: FeatureSpec { attr_dims },
        encoder_positional: get("encoder_positional")? == "true",
    };
    let epochs = num("completed_epochs")?;
    Ok((config, epochs))
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn write_tensor_data(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(t.data.len() * 8);
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_tensor_data(r: &mut impl Read, numel: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; numel * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Write a model (parameters, optimizer state, config, vocabulary) to disk.
pub fn save_checkpoint(model: &Model, completed_epochs: usize, path: &Path) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(|e| io(&tmp, e))?);
    let inner = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, FORMAT_VERSION)?;
        let kv = config_to_kv(model.config(), completed_epochs);
        let block: String = kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        write_bytes(&mut w, block.as_bytes())?;
        // vocabulary snapshot
        let vocab = model.vocab();
        write_u64(&mut w, vocab.num_items() as u64)?;
        for (id, &count) in vocab.item_ids().iter().zip(vocab.counts()) {
            write_bytes(&mut w, id.as_bytes())?;
            write_u64(&mut w, count as u64)?;
        }
        write_u64(&mut w, vocab.threshold() as u64)?;
        // parameter blobs
        let params = model.params();
        write_u32(&mut w, params.names().count() as u32)?;
        for (name, entry) in params.iter() {
            write_bytes(&mut w, name.as_bytes())?;
            write_u64(&mut w, entry.value.rows as u64)?;
            write_u64(&mut w, entry.value.cols as u64)?;
            write_tensor_data(&mut w, &entry.value)?;
        }
        // optimizer state, same parameter order
        w.write_all(&[1u8])?;
        write_u64(&mut w, params.step_count())?;
        for (_, entry) in params.iter() {
            write_tensor_data(&mut w, &entry.m)?;
            write_tensor_data(&mut w, &entry.v)?;
        }
        Ok(())
    })();
    inner.map_err(|e| io(&tmp, e))?;
    w.flush().map_err(|e| io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| io(path, e))
}

/// Load a model; the catalog must be the one the checkpointed vocabulary
/// was built against.
pub fn load_checkpoint(path: &Path, catalog: &Catalog) -> Result<(Model, usize), HarnessError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| io(path, e))?);
    let mut magic = vec![0u8; MAGIC.len()];
    r.read_exact(&mut magic).map_err(|e| io(path, e))?;
    if magic != MAGIC {
        return Err(err("not an outfit-bench checkpoint (bad magic)"));
    }
    let version = read_u32(&mut r).map_err(|e| io(path, e))?;
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    let block = String::from_utf8(read_bytes(&mut r).map_err(|e| io(path, e))?).map_err(|_| err("config block not utf8"))?;
    let mut kv = BTreeMap::new();
    for line in block.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let (config, completed_epochs) = config_from_kv(&kv)?;

    let n_items = read_u64(&mut r).map_err(|e| io(path, e))? as usize;
    let mut items = Vec::with_capacity(n_items);
    let mut counts = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let id = String::from_utf8(read_bytes(&mut r).map_err(|e| io(path, e))?).map_err(|_| err("item id not utf8"))?;
        let count = read_u64(&mut r).map_err(|e| io(path, e))? as usize;
        items.push(id);
        counts.push(count);
    }
    let threshold = read_u64(&mut r).map_err(|e| io(path, e))? as usize;
    let vocab = Vocabulary::from_parts(items, counts, threshold);

    let mut model = Model::new(config, vocab, catalog, 0).map_err(|e| err(format!("rebuilding architecture: {e}")))?;

    let n_params = read_u32(&mut r).map_err(|e| io(path, e))? as usize;
    let expected = model.params().names().count();
    if n_params != expected {
        return Err(err(format!("checkpoint has {n_params} parameters, architecture expects {expected}")));
    }
    let mut order = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = String::from_utf8(read_bytes(&mut r).map_err(|e| io(path, e))?).map_err(|_| err("param name not utf8"))?;
        let rows = read_u64(&mut r).map_err(|e| io(path, e))? as usize;
        let cols = read_u64(&mut r).map_err(|e| io(path, e))? as usize;
        let data = read_tensor_data(&mut r, rows * cols).map_err(|e| io(path, e))?;
        if !model.params().contains(&name) {
            return Err(err(format!("unknown parameter {name} in checkpoint")));
        }
        let slot = model.params_mut().get_mut(&name);
        if (slot.rows, slot.cols) != (rows, cols) {
            return Err(err(format!("parameter {name}: shape {rows}x{cols} does not match architecture {}x{}", slot.rows, slot.cols)));
        }
        slot.data = data;
        order.push(name);
    }
    let mut has_opt = [0u8; 1];
    r.read_exact(&mut has_opt).map_err(|e| io(path, e))?;
    if has_opt[0] == 1 {
        let step = read_u64(&mut r).map_err(|e| io(path, e))?;
        model.params_mut().set_step_count(step);
        for name in &order {
            let numel = model.params().get(name).numel();
            let m = read_tensor_data(&mut r, numel).map_err(|e| io(path, e))?;
            let v = read_tensor_data(&mut r, numel).map_err(|e| io(path, e))?;
            let entry = model.params_mut().iter_mut().find(|(n, _)| *n == name).map(|(_, e)| e).unwrap();
            entry.m.data = m;
            entry.v.data = v;
        }
    }
    Ok((model, completed_epochs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{outfit_tokens, ModelConfig, TrainSample};
    use crate::synthgen::{generate_catalog, generate_outfits, StyleWorld};

    #[test]
    fn roundtrip_preserves_loss_bit_exactly() {
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 80, 111).unwrap();
        let (outfits, _) = generate_outfits(&world, &catalog, 80, 112, None);
        let vocab = Vocabulary::build(&outfits, 1).unwrap();
        let rank = crate::catalog::default_category_rank();
        let samples: Vec<TrainSample> = outfits
            .iter()
            .map(|o| TrainSample { tokens: outfit_tokens(&o.items, &catalog, &vocab, &rank).unwrap(), context: None })
            .collect();
        let mut config = ModelConfig::desk_default(ModelFamily::Gpt);
        config.d_model = 16;
        config.num_layers = 1;
        config.num_heads = 2;
        let mut model = Model::new(config, vocab, &catalog, 300).unwrap();
        // a bit of training so moments and step count are non-trivial
        let opts = crate::models::train::TrainOptions {
            epochs: 1,
            batch_size: 32,
            learning_rate: 1e-3,
            data_seed: 1,
            init_seed: 2,
            start_epoch: 0,
        };
        crate::models::train::train(&mut model, &samples, &opts).unwrap();

        let before = match &model {
            Model::Gpt(m) => m.loss(&samples[0].tokens, None).unwrap(),
            _ => unreachable!(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, 1, &path).unwrap();
        let (loaded, epochs) = load_checkpoint(&path, &catalog).unwrap();
        assert_eq!(epochs, 1);
        assert_eq!(loaded.params().step_count(), model.params().step_count());
        let after = match &loaded {
            Model::Gpt(m) => m.loss(&samples[0].tokens, None).unwrap(),
            _ => unreachable!(),
        };
        assert_eq!(before.to_bits(), after.to_bits(), "checkpoint roundtrip must preserve the loss bit-exactly");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all............").unwrap();
        let world = StyleWorld::default();
        let catalog = generate_catalog(&world, 10, 1).unwrap();
        assert!(load_checkpoint(&path, &catalog).is_err());
    }
}
