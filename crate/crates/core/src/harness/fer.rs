//! FER2013-format CSV: header `emotion,pixels,Usage`, one 48x48 grayscale
//! face per row as 2304 space-separated intensities.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use super::{HarnessError, Result};
use crate::features::{rescale, EmotionLabel, Frame, ImageTensor, IMAGE_PIXELS, IMAGE_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Usage {
    Training,
    PublicTest,
    PrivateTest,
}

impl Usage {
    pub fn as_str(self) -> &'static str {
        match self {
            Usage::Training => "Training",
            Usage::PublicTest => "PublicTest",
            Usage::PrivateTest => "PrivateTest",
        }
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FerRecord {
    pub label: EmotionLabel,
    pub pixels: Vec<u8>,
    pub usage: Usage,
}

impl FerRecord {
    pub fn image(&self) -> ImageTensor {
        let frame = Frame::new(
            IMAGE_SIDE,
            IMAGE_SIDE,
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
        .expect("record holds 48x48 pixels");
        rescale(&frame).expect("8-bit pixels are in range")
    }
}

const HEADER: [&str; 3] = ["emotion", "pixels", "Usage"];

fn parse_row(fields: &csv::StringRecord, row: usize) -> Result<FerRecord> {
    let bad = |reason: String| HarnessError::MalformedRow { row, reason };
    if fields.len() != 3 {
        return Err(bad(format!("expected 3 fields, found {}", fields.len())));
    }
    let label = fields[0]
        .trim()
        .parse::<usize>()
        .ok()
        .and_then(EmotionLabel::from_index)
        .ok_or_else(|| bad(format!("emotion {:?} is not in 0..=6", &fields[0])))?;
    let pixels = fields[1]
        .split_ascii_whitespace()
        .map(|p| {
            p.parse::<u8>()
                .map_err(|_| bad(format!("pixel {p:?} is not in 0..=255")))
        })
        .collect::<Result<Vec<u8>>>()?;
    if pixels.len() != IMAGE_PIXELS {
        return Err(bad(format!(
            "{} pixels, expected {IMAGE_PIXELS}",
            pixels.len()
        )));
    }
    let usage = match fields[2].trim() {
        "Training" => Usage::Training,
        "PublicTest" => Usage::PublicTest,
        "PrivateTest" => Usage::PrivateTest,
        other => return Err(bad(format!("unknown usage {other:?}"))),
    };
    Ok(FerRecord {
        label,
        pixels,
        usage,
    })
}

/// Parses FER2013 rows from any reader. Row numbers in errors count data
/// rows from 1.
pub fn read_fer_csv(reader: impl Read) -> Result<Vec<FerRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(HarnessError::BadHeader(e.to_string())),
        None => return Err(HarnessError::BadHeader("file is empty".into())),
    };
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(HarnessError::BadHeader(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| HarnessError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        out.push(parse_row(&rec, row)?);
    }
    let counts = usage_counts(&out);
    log::info!(
        "loaded {} FER rows: {}",
        out.len(),
        counts
            .iter()
            .map(|(u, n)| format!("{u} {n}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(out)
}

pub fn load_fer_csv(path: &Path) -> Result<Vec<FerRecord>> {
    let file =
        std::fs::File::open(path).map_err(|_| HarnessError::MissingFile(path.to_path_buf()))?;
    read_fer_csv(std::io::BufReader::new(file))
}

pub fn usage_counts(records: &[FerRecord]) -> BTreeMap<Usage, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.usage).or_insert(0) += 1;
    }
    counts
}
