//! Synthetic multi-node patient cohorts with a known ground-truth rule.
//!
//! Each node gets its own column names and value encodings so that every
//! federated query exercises the catalog mapping. All marginals and rule
//! strengths here are invented; the manifest says so.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AttributeDef, AttributeKind, CatalogError, CatalogStore, GlobalSchema};
use crate::datanode::{ingest_reader, ColumnDef, DataNode, NodeDescriptor, NodeError};
use crate::mlcore::rng_from_seed;
use crate::value::{Row, Value};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("invalid cohort spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
}

/// Value -> probability. Keys also define the attribute's vocabulary, in
/// sorted order.
pub type Dist = BTreeMap<String, f64>;

pub const ATTRIBUTES: [&str; 10] = [
    "sex",
    "age",
    "cancer_type",
    "tnm_stage",
    "treatment",
    "frequency",
    "ae_occurred",
    "ae_type",
    "ae_caused_by_treatment",
    "days_since_start",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub node_id: String,
    pub table: String,
    pub rows: usize,
    /// Global attribute -> local column. Unlisted attributes keep their name.
    #[serde(default)]
    pub rename: BTreeMap<String, String>,
    /// Global attribute -> (global value -> local value).
    #[serde(default)]
    pub recode: BTreeMap<String, BTreeMap<String, String>>,
    /// Optional unmapped identifier column, first in the file.
    #[serde(default)]
    pub id_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentRule {
    pub cancer_type: String,
    /// Empty matches every stage.
    #[serde(default)]
    pub stages: Vec<String>,
    pub treatment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBand {
    pub label: String,
    /// Inclusive lower bound; a patient falls in the last band whose `min`
    /// does not exceed their age.
    pub min: i64,
}

/// One row of the adverse-event decision table. Empty lists match anything;
/// the first matching row wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskRule {
    #[serde(default)]
    pub treatments: Vec<String>,
    #[serde(default)]
    pub stages: Vec<String>,
    #[serde(default)]
    pub age_bands: Vec<String>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausationWindow {
    pub ae_type: String,
    /// Inclusive day range in which the event is usually treatment-caused.
    pub days: [i64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub seed: u64,
    /// Probability of flipping each generated `ae_occurred` label.
    pub label_noise: f64,
    pub nodes: Vec<NodeSpec>,
    pub sex: Dist,
    pub age_range: [i64; 2],
    pub cancer_type: Dist,
    pub tnm_stage: Dist,
    pub treatments: Vec<String>,
    pub treatment_rules: Vec<TreatmentRule>,
    /// Probability that a patient gets the rule's treatment; otherwise one of
    /// the remaining treatments uniformly.
    pub treatment_adherence: f64,
    pub frequencies: Vec<String>,
    pub frequency_by_treatment: BTreeMap<String, String>,
    pub frequency_adherence: f64,
    pub age_bands: Vec<AgeBand>,
    pub risk_rules: Vec<RiskRule>,
    /// AE probability when no risk rule matches.
    pub base_risk: f64,
    pub ae_type_by_treatment: BTreeMap<String, Dist>,
    pub days_range: [i64; 2],
    pub causation_windows: Vec<CausationWindow>,
    pub caused_inside: f64,
    pub caused_outside: f64,
}

fn check_dist(name: &str, d: &Dist) -> Result<(), CohortError> {
    let sum: f64 = d.values().sum();
    if d.is_empty() || (sum - 1.0).abs() > 1e-9 || d.values().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(CohortError::Spec(format!("{name}: probabilities must be in [0,1] and sum to 1 (got {sum})")));
    }
    Ok(())
}

fn check_prob(name: &str, p: f64) -> Result<(), CohortError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(CohortError::Spec(format!("{name} must be in [0, 1]")))
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), CohortError> {
        let spec = |m: String| Err(CohortError::Spec(m));
        if !(0.0..0.5).contains(&self.label_noise) {
            return spec("label_noise must be in [0, 0.5)".into());
        }
        if self.nodes.is_empty() {
            return spec("at least one node is required".into());
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(&n.node_id) {
                return spec(format!("duplicate node_id {}", n.node_id));
            }
            for a in n.rename.keys().chain(n.recode.keys()) {
                if !ATTRIBUTES.contains(&a.as_str()) {
                    return spec(format!("{}: unknown attribute {a}", n.node_id));
                }
            }
        }
        check_dist("sex", &self.sex)?;
        check_dist("cancer_type", &self.cancer_type)?;
        check_dist("tnm_stage", &self.tnm_stage)?;
        for (t, d) in &self.ae_type_by_treatment {
            check_dist(&format!("ae_type_by_treatment.{t}"), d)?;
        }
        for (name, p) in [
            ("treatment_adherence", self.treatment_adherence),
            ("frequency_adherence", self.frequency_adherence),
            ("base_risk", self.base_risk),
            ("caused_inside", self.caused_inside),
            ("caused_outside", self.caused_outside),
        ] {
            check_prob(name, p)?;
        }
        for (i, r) in self.risk_rules.iter().enumerate() {
            check_prob(&format!("risk_rules[{i}].probability"), r.probability)?;
        }
        if self.age_range[0] > self.age_range[1] || self.days_range[0] > self.days_range[1] {
            return spec("ranges must be [min, max]".into());
        }
        if self.treatments.len() < 2 || self.frequencies.is_empty() || self.age_bands.is_empty() {
            return spec("need >= 2 treatments, >= 1 frequency and >= 1 age band".into());
        }
        let ae_types: Vec<BTreeSet<&String>> = self.ae_type_by_treatment.values().map(|d| d.keys().collect()).collect();
        if ae_types.windows(2).any(|w| w[0] != w[1]) {
            return spec("every ae_type distribution must list the same types".into());
        }
        for t in &self.treatments {
            if !self.ae_type_by_treatment.contains_key(t) || !self.frequency_by_treatment.contains_key(t) {
                return spec(format!("treatment {t} lacks an ae_type distribution or frequency"));
            }
        }
        Ok(())
    }

    fn ae_types(&self) -> Vec<String> {
        self.ae_type_by_treatment
            .values()
            .next()
            .map(|d| d.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn schema(&self) -> GlobalSchema {
        let vocab = |v: Vec<String>| v;
        let cat = |name: &str, values: Vec<String>| AttributeDef {
            name: name.into(),
            kind: AttributeKind::Categorical,
            vocabulary: vocab(values),
            unit: None,
            range: None,
        };
        let keys = |d: &Dist| d.keys().cloned().collect::<Vec<_>>();
        let mut treatments = self.treatments.clone();
        treatments.sort();
        let mut frequencies = self.frequencies.clone();
        frequencies.sort();
        let mut age = AttributeDef::integer("age", Some([self.age_range[0] as f64, self.age_range[1] as f64]));
        age.unit = Some("years".into());
        let mut days = AttributeDef::integer(
            "days_since_start",
            Some([self.days_range[0] as f64, self.days_range[1] as f64]),
        );
        days.unit = Some("days".into());
        GlobalSchema {
            version: 1,
            attributes: vec![
                cat("sex", keys(&self.sex)),
                age,
                cat("cancer_type", keys(&self.cancer_type)),
                cat("tnm_stage", keys(&self.tnm_stage)),
                cat("treatment", treatments),
                cat("frequency", frequencies),
                cat("ae_occurred", vec!["no".into(), "yes".into()]),
                cat("ae_type", self.ae_types()),
                cat("ae_caused_by_treatment", vec!["no".into(), "yes".into()]),
                days,
            ],
        }
    }

    fn age_band(&self, age: i64) -> &str {
        self.age_bands
            .iter()
            .rfind(|b| b.min <= age)
            .map_or("", |b| b.label.as_str())
    }

    /// AE probability for a patient under the decision table.
    pub fn ae_probability(&self, treatment: &str, stage: &str, age: i64) -> f64 {
        let band = self.age_band(age);
        let any_or = |list: &[String], v: &str| list.is_empty() || list.iter().any(|x| x == v);
        self.risk_rules
            .iter()
            .find(|r| any_or(&r.treatments, treatment) && any_or(&r.stages, stage) && any_or(&r.age_bands, band))
            .map_or(self.base_risk, |r| r.probability)
    }

    fn rule_treatment(&self, cancer: &str, stage: &str) -> Option<&str> {
        self.treatment_rules
            .iter()
            .find(|r| r.cancer_type == cancer && (r.stages.is_empty() || r.stages.iter().any(|s| s == stage)))
            .map(|r| r.treatment.as_str())
    }
}

fn sample<'a, R: Rng>(d: &'a Dist, rng: &mut R) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in d {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding slack: fall back to the last key with mass
    d.iter().rev().find(|(_, &p)| p > 0.0).map_or("", |(k, _)| k)
}

fn pick_other<'a, R: Rng>(options: &'a [String], preferred: Option<&str>, adherence: f64, rng: &mut R) -> &'a str {
    match preferred {
        Some(p) if rng.random::<f64>() < adherence => options.iter().find(|o| *o == p).map_or(p_or_first(options), |s| s),
        Some(p) => {
            let others: Vec<&String> = options.iter().filter(|o| *o != p).collect();
            others[rng.random_range(0..others.len())]
        }
        None => &options[rng.random_range(0..options.len())],
    }
}

fn p_or_first(options: &[String]) -> &str {
    &options[0]
}

/// One generated patient in global vocabulary. `None` marks a cell that is
/// empty because no adverse event occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub sex: String,
    pub age: i64,
    pub cancer_type: String,
    pub tnm_stage: String,
    pub treatment: String,
    pub frequency: String,
    pub ae_occurred: bool,
    pub ae_type: Option<String>,
    pub ae_caused_by_treatment: Option<bool>,
    pub days_since_start: Option<i64>,
}

impl PatientRecord {
    /// The record as a global-vocabulary row; empty cells are absent.
    pub fn to_row(&self) -> Row {
        ATTRIBUTES
            .iter()
            .zip(self.global_cells())
            .filter_map(|(attr, cell)| {
                let cell = cell?;
                let v = match *attr {
                    "age" | "days_since_start" => Value::Int(cell.parse().ok()?),
                    _ => Value::Text(cell),
                };
                Some((attr.to_string(), v))
            })
            .collect()
    }

    fn global_cells(&self) -> [Option<String>; 10] {
        let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
        [
            Some(self.sex.clone()),
            Some(self.age.to_string()),
            Some(self.cancer_type.clone()),
            Some(self.tnm_stage.clone()),
            Some(self.treatment.clone()),
            Some(self.frequency.clone()),
            Some(yn(self.ae_occurred)),
            self.ae_type.clone(),
            self.ae_caused_by_treatment.map(yn),
            self.days_since_start.map(|d| d.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub node_id: String,
    /// 0-based data row in the node's file.
    pub row: usize,
    pub ae_probability: f64,
    /// Label drawn from the rule, before noise.
    pub clean_ae_occurred: bool,
    pub noise_flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub note: String,
    pub spec: CohortSpec,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Accuracy of the Bayes rule (predict an AE when its probability is at
    /// least one half) against the emitted labels.
    pub fn oracle_accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let hits = self
            .rows
            .iter()
            .filter(|r| (r.ae_probability >= 0.5) == (r.clean_ae_occurred != r.noise_flipped))
            .count();
        hits as f64 / self.rows.len() as f64
    }

    pub fn flip_fraction(&self) -> f64 {
        self.rows.iter().filter(|r| r.noise_flipped).count() as f64 / self.rows.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedNode {
    pub descriptor: NodeDescriptor,
    pub records: Vec<PatientRecord>,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schema: GlobalSchema,
    pub nodes: Vec<GeneratedNode>,
    pub manifest: Manifest,
}

impl Cohort {
    pub fn catalog(&self) -> Result<CatalogStore, CohortError> {
        Ok(CatalogStore::new(
            self.schema.clone(),
            self.nodes.iter().map(|n| n.descriptor.mapping()).collect(),
        )?)
    }

    /// In-process nodes loaded from the generated CSV text.
    pub fn data_nodes(&self) -> Result<Vec<DataNode>, CohortError> {
        self.nodes
            .iter()
            .map(|n| {
                let d = &n.descriptor;
                let (ds, _) = ingest_reader(n.csv.as_bytes(), &d.table, &d.local_columns)?;
                Ok(DataNode::with_dataset(d.clone(), ds))
            })
            .collect()
    }

    /// Every node's records pooled into one identity-mapped node, the
    /// centralized baseline for federated training.
    pub fn pooled_node(&self, node_id: &str) -> Result<DataNode, CohortError> {
        let spec = NodeSpec {
            node_id: node_id.into(),
            table: "pooled".into(),
            rows: 0,
            rename: BTreeMap::new(),
            recode: BTreeMap::new(),
            id_column: None,
        };
        let descriptor = node_descriptor(&self.manifest.spec, &spec);
        let records: Vec<PatientRecord> = self.nodes.iter().flat_map(|n| n.records.iter().cloned()).collect();
        let csv = render_csv(&descriptor, &records, false)?;
        let (ds, _) = ingest_reader(csv.as_bytes(), &descriptor.table, &descriptor.local_columns)?;
        Ok(DataNode::with_dataset(descriptor, ds))
    }

    /// Writes `<node>.csv`, `<node>.mapping.json`, `catalog.json` and
    /// `manifest.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, CohortError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut write = |name: String, body: &str| -> Result<(), CohortError> {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        for n in &self.nodes {
            let id = &n.descriptor.node_id;
            write(format!("{id}.csv"), &n.csv)?;
            write(
                format!("{id}.mapping.json"),
                &serde_json::to_string_pretty(&n.descriptor).expect("descriptor serializes"),
            )?;
        }
        write("catalog.json".into(), &self.catalog()?.to_json())?;
        write(
            "manifest.json".into(),
            &serde_json::to_string_pretty(&self.manifest).expect("manifest serializes"),
        )?;
        Ok(written)
    }
}

fn draw_patient<R: Rng>(spec: &CohortSpec, rng: &mut R) -> (PatientRecord, f64, bool, bool) {
    let sex = sample(&spec.sex, rng).to_string();
    let age = rng.random_range(spec.age_range[0]..=spec.age_range[1]);
    let cancer_type = sample(&spec.cancer_type, rng).to_string();
    let tnm_stage = sample(&spec.tnm_stage, rng).to_string();
    let treatment = pick_other(
        &spec.treatments,
        spec.rule_treatment(&cancer_type, &tnm_stage),
        spec.treatment_adherence,
        rng,
    )
    .to_string();
    let frequency = pick_other(
        &spec.frequencies,
        spec.frequency_by_treatment.get(&treatment).map(String::as_str),
        spec.frequency_adherence,
        rng,
    )
    .to_string();

    let p = spec.ae_probability(&treatment, &tnm_stage, age);
    let clean = rng.random::<f64>() < p;
    let flipped = rng.random::<f64>() < spec.label_noise;
    let ae_occurred = clean != flipped;

    let (ae_type, caused, days) = if ae_occurred {
        let ae_type = sample(&spec.ae_type_by_treatment[&treatment], rng).to_string();
        let days = rng.random_range(spec.days_range[0]..=spec.days_range[1]);
        let inside = spec
            .causation_windows
            .iter()
            .any(|w| w.ae_type == ae_type && (w.days[0]..=w.days[1]).contains(&days));
        let p_caused = if inside { spec.caused_inside } else { spec.caused_outside };
        (Some(ae_type), Some(rng.random::<f64>() < p_caused), Some(days))
    } else {
        (None, None, None)
    };
    (
        PatientRecord {
            sex,
            age,
            cancer_type,
            tnm_stage,
            treatment,
            frequency,
            ae_occurred,
            ae_type,
            ae_caused_by_treatment: caused,
            days_since_start: days,
        },
        p,
        clean,
        flipped,
    )
}

fn node_descriptor(spec: &CohortSpec, node: &NodeSpec) -> NodeDescriptor {
    let schema = spec.schema();
    let mut local_columns = Vec::new();
    if let Some(id) = &node.id_column {
        local_columns.push(ColumnDef::new(id, AttributeKind::NumericInteger));
    }
    let mut columns = BTreeMap::new();
    for attr in &schema.attributes {
        let local = node.rename.get(&attr.name).cloned().unwrap_or_else(|| attr.name.clone());
        local_columns.push(ColumnDef::new(&local, attr.kind));
        columns.insert(attr.name.clone(), local);
    }
    // complete recodes so every vocabulary value has a local encoding
    let values = node
        .recode
        .iter()
        .map(|(attr, map)| {
            let vocab = schema.attribute(attr).map(|a| a.vocabulary.clone()).unwrap_or_default();
            let full = vocab
                .into_iter()
                .map(|g| (g.clone(), map.get(&g).cloned().unwrap_or(g)))
                .collect();
            (attr.clone(), full)
        })
        .collect();
    NodeDescriptor {
        node_id: node.node_id.clone(),
        table: node.table.clone(),
        local_columns,
        columns,
        values,
    }
}

fn render_csv(descriptor: &NodeDescriptor, records: &[PatientRecord], with_id: bool) -> Result<String, CohortError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CohortError::Csv(e.to_string());
    w.write_record(descriptor.local_columns.iter().map(|c| c.name.as_str()))
        .map_err(csv_err)?;
    for (i, r) in records.iter().enumerate() {
        let mut cells: Vec<String> = Vec::with_capacity(11);
        if with_id {
            cells.push((100_000 + i).to_string());
        }
        for (attr, cell) in ATTRIBUTES.iter().zip(r.global_cells()) {
            let local = match cell {
                None => String::new(),
                Some(v) => descriptor
                    .values
                    .get(*attr)
                    .and_then(|m| m.get(&v))
                    .cloned()
                    .unwrap_or(v),
            };
            cells.push(local);
        }
        w.write_record(&cells).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CohortError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CohortError::Csv(e.to_string()))
}

/// Generates every node's table, its mapping, and the manifest. Identical
/// specs give byte-identical output.
pub fn generate(spec: &CohortSpec) -> Result<Cohort, CohortError> {
    spec.validate()?;
    let schema = spec.schema();
    let mut nodes = Vec::with_capacity(spec.nodes.len());
    let mut manifest_rows = Vec::new();
    for (i, node) in spec.nodes.iter().enumerate() {
        let mut rng = rng_from_seed(spec.seed.wrapping_add(i as u64 * 1_000_003));
        let mut records = Vec::with_capacity(node.rows);
        for row in 0..node.rows {
            let (rec, p, clean, flipped) = draw_patient(spec, &mut rng);
            records.push(rec);
            manifest_rows.push(ManifestRow {
                node_id: node.node_id.clone(),
                row,
                ae_probability: p,
                clean_ae_occurred: clean,
                noise_flipped: flipped,
            });
        }
        let descriptor = node_descriptor(spec, node);
        let csv = render_csv(&descriptor, &records, node.id_column.is_some())?;
        nodes.push(GeneratedNode {
            descriptor,
            records,
            csv,
        });
    }
    // the catalog validates every mapping against the schema
    CatalogStore::new(schema.clone(), nodes.iter().map(|n| n.descriptor.mapping()).collect())?;
    Ok(Cohort {
        schema,
        nodes,
        manifest: Manifest {
            note: "synthetic cohort: every marginal and rule strength is invented".into(),
            spec: spec.clone(),
            rows: manifest_rows,
        },
    })
}

fn dist(pairs: &[(&str, f64)]) -> Dist {
    pairs.iter().map(|(k, p)| (k.to_string(), *p)).collect()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn pairs(v: &[(&str, &str)]) -> BTreeMap<String, String> {
    v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Three nodes of 2,000 immunotherapy patients each.
pub fn default_cohort_spec() -> CohortSpec {
    let advanced = strings(&["T4N2M0", "T4N3M1"]);
    let ae = |dominant: &str| {
        let types = ["colitis", "fatigue", "hepatitis", "pneumonitis", "rash"];
        types
            .iter()
            .map(|t| (t.to_string(), if *t == dominant { 0.8 } else { 0.05 }))
            .collect::<Dist>()
    };
    CohortSpec {
        seed: 0,
        label_noise: 0.05,
        nodes: vec![
            NodeSpec {
                node_id: "france".into(),
                table: "patients_fr".into(),
                rows: 2000,
                rename: pairs(&[
                    ("sex", "SEXE"),
                    ("age", "AGE"),
                    ("cancer_type", "TYPE_CANCER"),
                    ("tnm_stage", "STADE_TNM"),
                    ("treatment", "TRAITEMENT"),
                    ("frequency", "FREQUENCE"),
                    ("ae_occurred", "EI_SURVENU"),
                    ("ae_type", "TYPE_EI"),
                    ("ae_caused_by_treatment", "EI_IMPUTABLE"),
                    ("days_since_start", "JOURS_DEPUIS_DEBUT"),
                ]),
                recode: BTreeMap::from([
                    ("sex".to_string(), pairs(&[("female", "F"), ("male", "M")])),
                    ("ae_occurred".to_string(), pairs(&[("no", "non"), ("yes", "oui")])),
                    ("ae_caused_by_treatment".to_string(), pairs(&[("no", "non"), ("yes", "oui")])),
                    ("ae_type".to_string(), pairs(&[("fatigue", "asthenie"), ("rash", "eruption")])),
                ]),
                id_column: Some("ID_PATIENT".into()),
            },
            NodeSpec {
                node_id: "portugal".into(),
                table: "doentes".into(),
                rows: 2000,
                rename: BTreeMap::new(),
                recode: BTreeMap::new(),
                id_column: None,
            },
            NodeSpec {
                node_id: "spain".into(),
                table: "pacientes".into(),
                rows: 2000,
                rename: pairs(&[
                    ("sex", "sexo"),
                    ("age", "edad"),
                    ("cancer_type", "tipo_cancer"),
                    ("tnm_stage", "estadio"),
                    ("treatment", "tratamiento"),
                    ("frequency", "frecuencia"),
                    ("ae_occurred", "ea_ocurrido"),
                    ("ae_type", "tipo_ea"),
                    ("ae_caused_by_treatment", "ea_causado"),
                    ("days_since_start", "dias_desde_inicio"),
                ]),
                recode: BTreeMap::from([
                    ("sex".to_string(), pairs(&[("female", "f"), ("male", "m")])),
                    ("ae_occurred".to_string(), pairs(&[("no", "no"), ("yes", "si")])),
                    ("ae_caused_by_treatment".to_string(), pairs(&[("no", "no"), ("yes", "si")])),
                    (
                        "treatment".to_string(),
                        pairs(&[("pembrolizumab_200mg", "PEMBRO-200"), ("nivolumab_240mg", "NIVO-240")]),
                    ),
                    ("frequency".to_string(), pairs(&[("q2w", "c/2s"), ("q3w", "c/3s"), ("q4w", "c/4s")])),
                ]),
                id_column: Some("id".into()),
            },
        ],
        sex: dist(&[("female", 0.48), ("male", 0.52)]),
        age_range: [18, 90],
        cancer_type: dist(&[("head_neck", 0.15), ("lung", 0.35), ("melanoma", 0.35), ("renal", 0.15)]),
        tnm_stage: dist(&[
            ("T1N0M0", 0.12),
            ("T2N0M0", 0.18),
            ("T2N1M0", 0.2),
            ("T3AN2Cm0", 0.2),
            ("T4N2M0", 0.16),
            ("T4N3M1", 0.14),
        ]),
        treatments: strings(&[
            "atezolizumab_1200mg",
            "ipilimumab_3mgkg",
            "nivolumab_240mg",
            "nivolumab_ipilimumab",
            "pembrolizumab_200mg",
        ]),
        treatment_rules: vec![
            TreatmentRule {
                cancer_type: "melanoma".into(),
                stages: advanced.clone(),
                treatment: "nivolumab_ipilimumab".into(),
            },
            TreatmentRule {
                cancer_type: "melanoma".into(),
                stages: vec![],
                treatment: "pembrolizumab_200mg".into(),
            },
            TreatmentRule {
                cancer_type: "lung".into(),
                stages: vec![],
                treatment: "atezolizumab_1200mg".into(),
            },
            TreatmentRule {
                cancer_type: "renal".into(),
                stages: vec![],
                treatment: "nivolumab_240mg".into(),
            },
            TreatmentRule {
                cancer_type: "head_neck".into(),
                stages: vec![],
                treatment: "ipilimumab_3mgkg".into(),
            },
        ],
        treatment_adherence: 0.8,
        frequencies: strings(&["q2w", "q3w", "q4w"]),
        frequency_by_treatment: pairs(&[
            ("atezolizumab_1200mg", "q3w"),
            ("ipilimumab_3mgkg", "q3w"),
            ("nivolumab_240mg", "q2w"),
            ("nivolumab_ipilimumab", "q3w"),
            ("pembrolizumab_200mg", "q3w"),
        ]),
        frequency_adherence: 0.85,
        age_bands: vec![
            AgeBand {
                label: "young".into(),
                min: 0,
            },
            AgeBand {
                label: "middle".into(),
                min: 50,
            },
            AgeBand {
                label: "senior".into(),
                min: 70,
            },
        ],
        risk_rules: vec![
            RiskRule {
                treatments: strings(&["nivolumab_ipilimumab", "ipilimumab_3mgkg"]),
                stages: vec![],
                age_bands: vec![],
                probability: 0.8,
            },
            RiskRule {
                treatments: vec![],
                stages: advanced,
                age_bands: strings(&["senior"]),
                probability: 0.8,
            },
        ],
        base_risk: 0.08,
        ae_type_by_treatment: BTreeMap::from([
            ("atezolizumab_1200mg".to_string(), ae("pneumonitis")),
            ("ipilimumab_3mgkg".to_string(), ae("colitis")),
            ("nivolumab_240mg".to_string(), ae("fatigue")),
            ("nivolumab_ipilimumab".to_string(), ae("hepatitis")),
            ("pembrolizumab_200mg".to_string(), ae("rash")),
        ]),
        days_range: [0, 540],
        causation_windows: vec![
            CausationWindow {
                ae_type: "colitis".into(),
                days: [30, 120],
            },
            CausationWindow {
                ae_type: "fatigue".into(),
                days: [0, 180],
            },
            CausationWindow {
                ae_type: "hepatitis".into(),
                days: [20, 100],
            },
            CausationWindow {
                ae_type: "pneumonitis".into(),
                days: [60, 240],
            },
            CausationWindow {
                ae_type: "rash".into(),
                days: [0, 60],
            },
        ],
        caused_inside: 0.9,
        caused_outside: 0.2,
    }
}
