//! CSV exports of attention maps and style features.

use tapegrad::Tensor;

use crate::error::{Error, Result};

fn csv_text(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| Error::Data(format!("csv: {e}")))?;
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv: {e}")))
}

fn maps(attn: &Tensor, tokens: &[String]) -> Result<(usize, usize)> {
    let s = attn.shape();
    let n = tokens.len();
    if s.len() != 3 || s[1] != n || s[2] != n {
        return Err(Error::Data(format!("attention of shape {s:?} does not match {n} tokens")));
    }
    Ok((s[0], n))
}

/// Head-averaged `[tokens, tokens]` map from `[heads, tokens, tokens]`.
pub fn head_average(attn: &Tensor) -> Result<Vec<Vec<f64>>> {
    let s = attn.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::Data(format!("expected [heads, n, n] attention, got {s:?}")));
    }
    let (h, n) = (s[0], s[1]);
    let mut out = vec![vec![0.0; n]; n];
    for head in attn.data().chunks(n * n) {
        for (r, row) in head.chunks(n).enumerate() {
            out[r].iter_mut().zip(row).for_each(|(o, v)| *o += v / h as f64);
        }
    }
    Ok(out)
}

/// Rows are the content motion's tokens, columns the style motion's tokens.
pub fn attention_csv(attn: &Tensor, tokens: &[String]) -> Result<String> {
    maps(attn, tokens)?;
    let avg = head_average(attn)?;
    csv_text(|w| {
        w.write_record(std::iter::once("content").chain(tokens.iter().map(String::as_str)))?;
        for (name, row) in tokens.iter().zip(&avg) {
            w.write_record(std::iter::once(name.clone()).chain(row.iter().map(|v| v.to_string())))?;
        }
        Ok(())
    })
}

/// Every head's map, one row per (head, content token).
pub fn attention_heads_csv(attn: &Tensor, tokens: &[String]) -> Result<String> {
    let (_, n) = maps(attn, tokens)?;
    csv_text(|w| {
        w.write_record(["head", "content"].into_iter().chain(tokens.iter().map(String::as_str)))?;
        for (h, head) in attn.data().chunks(n * n).enumerate() {
            for (name, row) in tokens.iter().zip(head.chunks(n)) {
                w.write_record([h.to_string(), name.clone()].into_iter().chain(row.iter().map(|v| v.to_string())))?;
            }
        }
        Ok(())
    })
}

/// A `[tokens, d]` feature matrix with one row per token.
pub fn features_csv(features: &Tensor, tokens: &[String]) -> Result<String> {
    let s = features.shape();
    if s.len() != 2 || s[0] != tokens.len() {
        return Err(Error::Data(format!("features of shape {s:?} do not match {} tokens", tokens.len())));
    }
    csv_text(|w| {
        let header: Vec<String> = std::iter::once("token".to_string()).chain((0..s[1]).map(|c| format!("c{c}"))).collect();
        w.write_record(&header)?;
        for (name, row) in tokens.iter().zip(features.data().chunks(s[1])) {
            w.write_record(std::iter::once(name.clone()).chain(row.iter().map(|v| v.to_string())))?;
        }
        Ok(())
    })
}

/// Reads a head-averaged attention CSV back as `(tokens, rows)`.
pub fn read_attention_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |e: csv::Error| Error::Data(format!("attention csv: {e}"));
    let header = r.headers().map_err(bad)?.clone();
    let tokens: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(bad)?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Data(format!("attention csv: bad number `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((tokens, rows))
}
