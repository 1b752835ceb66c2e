//! One-hot encoding against the global schema.
//!
//! Column order is the schema's attribute order, and every categorical
//! attribute contributes its whole vocabulary whether or not a node has seen
//! each value. This keeps the design-matrix width identical on every node.

use serde::{Deserialize, Serialize};

use crate::catalog::{AttributeKind, GlobalSchema};
use crate::value::{Row, Value};

use super::{MlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub attribute: String,
    pub offset: usize,
    pub kind: AttributeKind,
    /// Vocabulary for categorical blocks; empty for numeric.
    pub vocabulary: Vec<String>,
    pub range: Option<[f64; 2]>,
}

impl FeatureBlock {
    pub fn width(&self) -> usize {
        match self.kind {
            AttributeKind::Categorical => self.vocabulary.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub blocks: Vec<FeatureBlock>,
    pub width: usize,
}

impl FeatureLayout {
    /// Builds the layout for `features`, ordered by schema position.
    pub fn new(schema: &GlobalSchema, features: &[&str]) -> Result<Self> {
        for f in features {
            if schema.attribute(f).is_none() {
                return Err(MlError::UnknownFeature(f.to_string()));
            }
        }
        let mut blocks = Vec::new();
        let mut offset = 0;
        for attr in schema.attributes.iter().filter(|a| features.contains(&a.name.as_str())) {
            let block = FeatureBlock {
                attribute: attr.name.clone(),
                offset,
                kind: attr.kind,
                vocabulary: attr.vocabulary.clone(),
                range: attr.range,
            };
            offset += block.width();
            blocks.push(block);
        }
        Ok(Self {
            blocks,
            width: offset,
        })
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.attribute.as_str())
    }

    /// Encodes a full row. Every feature must be present and in vocabulary.
    pub fn encode(&self, row: &Row) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.width];
        for block in &self.blocks {
            let cell = row
                .get(&block.attribute)
                .ok_or_else(|| MlError::BadCell(block.attribute.clone()))?;
            write_block(block, cell, &mut out)?;
        }
        Ok(out)
    }

    /// Encodes a partial profile: absent features stay all-zero. Used for
    /// inference on a query's filter values.
    pub fn encode_partial(&self, row: &Row) -> Result<(Vec<f64>, Vec<String>)> {
        let mut out = vec![0.0; self.width];
        let mut missing = Vec::new();
        for block in &self.blocks {
            match row.get(&block.attribute) {
                Some(cell) => write_block(block, cell, &mut out)?,
                None => missing.push(block.attribute.clone()),
            }
        }
        Ok((out, missing))
    }
}

fn write_block(block: &FeatureBlock, cell: &Value, out: &mut [f64]) -> Result<()> {
    match (block.kind, cell) {
        (AttributeKind::Categorical, Value::Text(s)) => {
            let idx = block
                .vocabulary
                .iter()
                .position(|v| v == s)
                .ok_or_else(|| MlError::OutOfVocabulary {
                    attribute: block.attribute.clone(),
                    value: s.clone(),
                })?;
            out[block.offset + idx] = 1.0;
        }
        (AttributeKind::NumericInteger | AttributeKind::NumericReal, v) if v.is_numeric() => {
            let x = v.as_f64().unwrap_or(f64::NAN);
            if !x.is_finite() {
                return Err(MlError::NonFinite("feature value"));
            }
            out[block.offset] = match block.range {
                Some([lo, hi]) => (x - lo) / (hi - lo),
                None => x,
            };
        }
        _ => return Err(MlError::BadCell(block.attribute.clone())),
    }
    Ok(())
}

/// One-hot encodes `rows` over `features` in schema order.
pub fn one_hot_encode(rows: &[Row], schema: &GlobalSchema, features: &[&str]) -> Result<Vec<Vec<f64>>> {
    let layout = FeatureLayout::new(schema, features)?;
    rows.iter().map(|r| layout.encode(r)).collect()
}
