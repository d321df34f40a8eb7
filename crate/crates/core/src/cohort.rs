//! Multi-subtype survival/genotype data: the gene → subtype → SNP hierarchy,
//! per-subtype cohorts, CSV ingestion and the missing-data policy.
//!
//! Genotype columns of a cohort are grouped contiguously by gene, genes in
//! gene-map order. A SNP whose values are all `NA` within a subtype is treated
//! as not measured for that subtype, so its coefficient is zero by omission.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (gene, subtype) block of SNPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub gene: usize,
    pub subtype: usize,
    pub snp_ids: Vec<String>,
    /// Coefficient range inside the flat coefficient vector.
    pub coef: Range<usize>,
    /// Column range inside the owning subtype's genotype matrix.
    pub cols: Range<usize>,
}

impl BlockSpec {
    pub fn size(&self) -> usize {
        self.snp_ids.len()
    }
}

/// The gene/SNP/subtype hierarchy.
///
/// Blocks are ordered gene-major, then by subtype. Coefficients follow the
/// same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneStructure {
    genes: Vec<String>,
    subtypes: Vec<String>,
    blocks: Vec<BlockSpec>,
    gene_blocks: Vec<Range<usize>>,
    subtype_widths: Vec<usize>,
    dim: usize,
}

impl GeneStructure {
    /// Build from `(gene index, subtype index, snp ids)` entries.
    pub fn new(
        genes: Vec<String>,
        subtypes: Vec<String>,
        mut entries: Vec<(usize, usize, Vec<String>)>,
    ) -> Result<Self> {
        if subtypes.is_empty() {
            return Err(Error::Structure("no subtypes".into()));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Structure(format!(
                    "duplicate block for gene `{}` subtype `{}`",
                    genes[w[0].0], subtypes[w[0].1]
                )));
            }
        }
        let mut blocks = Vec::with_capacity(entries.len());
        let mut gene_blocks = vec![0..0; genes.len()];
        let mut subtype_widths = vec![0usize; subtypes.len()];
        let mut offset = 0;
        let mut start = 0;
        for (j, gene_range) in gene_blocks.iter_mut().enumerate() {
            while start < entries.len() && entries[start].0 < j {
                start += 1;
            }
            let first = blocks.len();
            while start < entries.len() && entries[start].0 == j {
                let (_, k, ref snps) = entries[start];
                if k >= subtypes.len() {
                    return Err(Error::Structure(format!("subtype index {k} out of range")));
                }
                if snps.is_empty() {
                    return Err(Error::Structure(format!(
                        "empty block for gene `{}` subtype `{}`",
                        genes[j], subtypes[k]
                    )));
                }
                let mut seen = HashSet::new();
                for s in snps {
                    if !seen.insert(s.as_str()) {
                        return Err(Error::Structure(format!(
                            "duplicate SNP `{s}` in gene `{}` subtype `{}`",
                            genes[j], subtypes[k]
                        )));
                    }
                }
                let d = snps.len();
                blocks.push(BlockSpec {
                    gene: j,
                    subtype: k,
                    snp_ids: snps.clone(),
                    coef: offset..offset + d,
                    cols: subtype_widths[k]..subtype_widths[k] + d,
                });
                subtype_widths[k] += d;
                offset += d;
                start += 1;
            }
            if blocks.len() == first {
                return Err(Error::Structure(format!("gene `{}` has no measured block", genes[j])));
            }
            *gene_range = first..blocks.len();
        }
        if start < entries.len() {
            return Err(Error::Structure(format!("gene index {} out of range", entries[start].0)));
        }
        Ok(Self {
            genes,
            subtypes,
            blocks,
            gene_blocks,
            subtype_widths,
            dim: offset,
        })
    }

    /// Every gene measured in every subtype with the same SNP list.
    pub fn uniform(genes: Vec<(String, Vec<String>)>, subtypes: Vec<String>) -> Result<Self> {
        let m = subtypes.len();
        let mut names = Vec::with_capacity(genes.len());
        let mut entries = Vec::with_capacity(genes.len() * m);
        for (j, (g, snps)) in genes.into_iter().enumerate() {
            for k in 0..m {
                entries.push((j, k, snps.clone()));
            }
            names.push(g);
        }
        Self::new(names, subtypes, entries)
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn subtypes(&self) -> &[String] {
        &self.subtypes
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_subtypes(&self) -> usize {
        self.subtypes.len()
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Block index range of gene `j`.
    pub fn gene_block_range(&self, j: usize) -> Range<usize> {
        self.gene_blocks[j].clone()
    }

    /// M_j: number of subtypes measuring gene `j`.
    pub fn subtypes_measuring(&self, j: usize) -> usize {
        self.gene_blocks[j].len()
    }

    /// Total coefficient dimension Σ_j Σ_k d_jk.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of genotype columns of subtype `m`.
    pub fn subtype_width(&self, m: usize) -> usize {
        self.subtype_widths[m]
    }

    pub fn find_block(&self, gene: usize, subtype: usize) -> Option<usize> {
        self.gene_blocks[gene]
            .clone()
            .find(|&b| self.blocks[b].subtype == subtype)
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.iter().position(|g| g == gene)
    }

    /// Blocks owned by subtype `m`, in column order.
    pub fn subtype_blocks(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.blocks.len()).filter(move |&b| self.blocks[b].subtype == m)
    }
}

/// One subtype's observations, rows in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeCohort {
    pub label: String,
    pub subject_ids: Vec<String>,
    /// Observed follow-up time in years.
    pub time: Vec<f64>,
    /// Natural log of `time`.
    pub log_time: Vec<f64>,
    pub event: Vec<bool>,
    /// `n_m x width` genotype matrix; `NaN` marks a missing entry.
    pub genotype: Array2<f64>,
}

impl SubtypeCohort {
    pub fn new(
        label: impl Into<String>,
        subject_ids: Vec<String>,
        time: Vec<f64>,
        event: Vec<bool>,
        genotype: Array2<f64>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if time.len() != n || event.len() != n || genotype.nrows() != n {
            return Err(Error::Dimension(format!(
                "cohort rows disagree: ids {n}, time {}, event {}, genotype {}",
                time.len(),
                event.len(),
                genotype.nrows()
            )));
        }
        for (id, &t) in subject_ids.iter().zip(&time) {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::NonPositiveTime {
                    subject: id.clone(),
                    time: t,
                });
            }
        }
        let log_time = time.iter().map(|t| t.ln()).collect();
        Ok(Self {
            label: label.into(),
            subject_ids,
            time,
            log_time,
            event,
            genotype,
        })
    }

    pub fn n(&self) -> usize {
        self.subject_ids.len()
    }

    /// Cohort restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            label: self.label.clone(),
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            time: rows.iter().map(|&i| self.time[i]).collect(),
            log_time: rows.iter().map(|&i| self.log_time[i]).collect(),
            event: rows.iter().map(|&i| self.event[i]).collect(),
            genotype: self.genotype.select(ndarray::Axis(0), rows),
        }
    }

    pub fn has_missing(&self) -> bool {
        self.genotype.iter().any(|v| v.is_nan())
    }
}

/// Data on `M` subtypes plus the shared gene structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStudy {
    pub cohorts: Vec<SubtypeCohort>,
    pub structure: GeneStructure,
}

impl MultiStudy {
    pub fn new(cohorts: Vec<SubtypeCohort>, structure: GeneStructure) -> Result<Self> {
        if cohorts.len() != structure.n_subtypes() {
            return Err(Error::Dimension(format!(
                "{} cohorts for {} subtypes",
                cohorts.len(),
                structure.n_subtypes()
            )));
        }
        for (m, c) in cohorts.iter().enumerate() {
            if c.genotype.ncols() != structure.subtype_width(m) {
                return Err(Error::Dimension(format!(
                    "subtype `{}` has {} genotype columns, structure expects {}",
                    c.label,
                    c.genotype.ncols(),
                    structure.subtype_width(m)
                )));
            }
            if c.n() == 0 {
                return Err(Error::Empty(format!("subtype `{}` has no subjects", c.label)));
            }
        }
        Ok(Self { cohorts, structure })
    }

    /// Total sample size n = Σ_m n_m.
    pub fn n(&self) -> usize {
        self.cohorts.iter().map(|c| c.n()).sum()
    }

    pub fn n_subtypes(&self) -> usize {
        self.cohorts.len()
    }

    /// The study restricted to subtype `m` alone.
    pub fn single_subtype(&self, m: usize) -> Result<Self> {
        let s = &self.structure;
        let mut genes = Vec::new();
        let mut entries = Vec::new();
        for j in 0..s.n_genes() {
            if let Some(b) = s.find_block(j, m) {
                entries.push((genes.len(), 0, s.blocks()[b].snp_ids.clone()));
                genes.push(s.genes()[j].clone());
            }
        }
        let structure = GeneStructure::new(genes, vec![s.subtypes()[m].clone()], entries)?;
        Self::new(vec![self.cohorts[m].clone()], structure)
    }

    /// Keep only the given rows of each cohort.
    pub fn subsample(&self, rows: &[Vec<usize>]) -> Result<Self> {
        let cohorts = self
            .cohorts
            .iter()
            .zip(rows)
            .map(|(c, r)| c.select_rows(r))
            .collect();
        Self::new(cohorts, self.structure.clone())
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        msg: msg.into(),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.len() < want.len() || want.iter().zip(got.iter()).any(|(w, g)| *w != g) {
        return Err(parse_err(
            path,
            format!("expected header starting with `{}`", want.join(",")),
        ));
    }
    Ok(())
}

fn parse_genotype_cell(path: &Path, cell: &str) -> Result<f64> {
    if cell == "NA" || cell.is_empty() {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(path, format!("bad genotype value `{cell}`")))
}

/// Read the genotype, survival and gene-map CSV triple.
pub fn load_csv(genotype_path: &Path, survival_path: &Path, gene_map_path: &Path) -> Result<MultiStudy> {
    // Gene map: row order defines column order.
    let mut rdr = open_csv(gene_map_path)?;
    let header = rdr.headers().map_err(|e| parse_err(gene_map_path, e.to_string()))?.clone();
    check_header(gene_map_path, &header, &["snp_id", "gene_id"])?;
    let mut genes: Vec<String> = Vec::new();
    let mut gene_pos: HashMap<String, usize> = HashMap::new();
    let mut snp_gene: HashMap<String, usize> = HashMap::new();
    let mut gene_snps: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(gene_map_path, e.to_string()))?;
        if rec.len() < 2 {
            return Err(parse_err(gene_map_path, "short row"));
        }
        let (snp, gene) = (rec[0].to_string(), rec[1].to_string());
        let j = *gene_pos.entry(gene.clone()).or_insert_with(|| {
            genes.push(gene.clone());
            gene_snps.push(Vec::new());
            genes.len() - 1
        });
        if snp_gene.insert(snp.clone(), j).is_some() {
            return Err(parse_err(gene_map_path, format!("SNP `{snp}` listed twice")));
        }
        gene_snps[j].push(snp);
    }

    // Survival.
    let mut rdr = open_csv(survival_path)?;
    let header = rdr.headers().map_err(|e| parse_err(survival_path, e.to_string()))?.clone();
    check_header(survival_path, &header, &["subject_id", "subtype", "time", "event"])?;
    let mut survival: HashMap<String, (String, f64, bool)> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(survival_path, e.to_string()))?;
        if rec.len() < 4 {
            return Err(parse_err(survival_path, "short row"));
        }
        let id = rec[0].to_string();
        let time: f64 = rec[2]
            .parse()
            .map_err(|_| parse_err(survival_path, format!("bad time `{}`", &rec[2])))?;
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::NonPositiveTime { subject: id, time });
        }
        let event = match &rec[3] {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(survival_path, format!("bad event `{other}`"))),
        };
        if survival.insert(id.clone(), (rec[1].to_string(), time, event)).is_some() {
            return Err(parse_err(survival_path, format!("subject `{id}` listed twice")));
        }
    }

    // Genotypes.
    let mut rdr = open_csv(genotype_path)?;
    let header = rdr.headers().map_err(|e| parse_err(genotype_path, e.to_string()))?.clone();
    check_header(genotype_path, &header, &["subject_id", "subtype"])?;
    let snp_cols: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut col_of: HashMap<&str, usize> = HashMap::new();
    for (c, s) in snp_cols.iter().enumerate() {
        if !snp_gene.contains_key(s) {
            return Err(Error::UnmappedSnp(s.clone()));
        }
        if col_of.insert(s.as_str(), c).is_some() {
            return Err(parse_err(genotype_path, format!("SNP column `{s}` repeated")));
        }
    }
    let mut subtypes: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<(String, Vec<f64>)>> = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(genotype_path, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(genotype_path, "row length differs from header"));
        }
        let id = rec[0].to_string();
        let sub = rec[1].to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(genotype_path, format!("subject `{id}` listed twice")));
        }
        match survival.get(&id) {
            None => {
                return Err(Error::SubjectMismatch(format!(
                    "subject `{id}` has genotypes but no survival record"
                )))
            }
            Some((s, _, _)) if *s != sub => {
                return Err(Error::SubjectMismatch(format!(
                    "subject `{id}` is subtype `{sub}` in genotypes but `{s}` in survival"
                )))
            }
            _ => {}
        }
        let m = match subtypes.iter().position(|s| *s == sub) {
            Some(m) => m,
            None => {
                subtypes.push(sub);
                rows.push(Vec::new());
                subtypes.len() - 1
            }
        };
        let vals = rec
            .iter()
            .skip(2)
            .map(|c| parse_genotype_cell(genotype_path, c))
            .collect::<Result<Vec<_>>>()?;
        rows[m].push((id, vals));
    }
    if let Some(id) = survival.keys().find(|id| !seen.contains(*id)) {
        return Err(Error::SubjectMismatch(format!(
            "subject `{id}` has a survival record but no genotypes"
        )));
    }
    if subtypes.is_empty() {
        return Err(Error::Empty("genotype file has no subjects".into()));
    }

    // Measured SNPs per subtype: any non-missing value.
    let mut entries = Vec::new();
    let mut cols_per_subtype: Vec<Vec<usize>> = vec![Vec::new(); subtypes.len()];
    for (j, snps) in gene_snps.iter().enumerate() {
        for (m, sub_rows) in rows.iter().enumerate() {
            let measured: Vec<&String> = snps
                .iter()
                .filter(|s| {
                    col_of
                        .get(s.as_str())
                        .is_some_and(|&c| sub_rows.iter().any(|(_, v)| !v[c].is_nan()))
                })
                .collect();
            if !measured.is_empty() {
                cols_per_subtype[m].extend(measured.iter().map(|s| col_of[s.as_str()]));
                entries.push((j, m, measured.into_iter().cloned().collect::<Vec<_>>()));
            }
        }
    }
    // Drop genes that no subtype measures.
    let kept: Vec<usize> = (0..genes.len())
        .filter(|j| entries.iter().any(|e| e.0 == *j))
        .collect();
    let remap: HashMap<usize, usize> = kept.iter().enumerate().map(|(i, &j)| (j, i)).collect();
    let entries = entries
        .into_iter()
        .map(|(j, m, s)| (remap[&j], m, s))
        .collect();
    let gene_names = kept.iter().map(|&j| genes[j].clone()).collect();
    let structure = GeneStructure::new(gene_names, subtypes.clone(), entries)?;

    let mut cohorts = Vec::with_capacity(subtypes.len());
    for (m, sub_rows) in rows.into_iter().enumerate() {
        let cols = &cols_per_subtype[m];
        let n = sub_rows.len();
        let mut geno = Array2::<f64>::zeros((n, cols.len()));
        let mut ids = Vec::with_capacity(n);
        let mut time = Vec::with_capacity(n);
        let mut event = Vec::with_capacity(n);
        for (i, (id, vals)) in sub_rows.into_iter().enumerate() {
            for (c, &src) in cols.iter().enumerate() {
                geno[[i, c]] = vals[src];
            }
            let (_, t, e) = survival[&id];
            ids.push(id);
            time.push(t);
            event.push(e);
        }
        cohorts.push(SubtypeCohort::new(subtypes[m].clone(), ids, time, event, geno)?);
    }
    MultiStudy::new(cohorts, structure)
}

/// Global SNP order per gene, merged across subtype blocks so that every
/// block's relative order is preserved.
fn merged_snp_order(s: &GeneStructure) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for j in 0..s.n_genes() {
        let mut list: Vec<String> = Vec::new();
        for b in s.gene_block_range(j) {
            let mut prev: Option<usize> = None;
            for snp in &s.blocks()[b].snp_ids {
                match list.iter().position(|x| x == snp) {
                    Some(p) => prev = Some(p),
                    None => {
                        let at = prev.map_or(0, |p| p + 1);
                        list.insert(at, snp.clone());
                        prev = Some(at);
                    }
                }
            }
        }
        out.extend(list.into_iter().map(|snp| (snp, j)));
    }
    out
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Write the CSV triple. Unmeasured and missing entries are written as `NA`.
pub fn save_csv(ms: &MultiStudy, genotype_path: &Path, survival_path: &Path, gene_map_path: &Path) -> Result<()> {
    let s = &ms.structure;
    let order = merged_snp_order(s);

    let mut w = csv::Writer::from_path(gene_map_path).map_err(|e| write_err(gene_map_path, e))?;
    w.write_record(["snp_id", "gene_id"]).map_err(|e| write_err(gene_map_path, e))?;
    for (snp, j) in &order {
        w.write_record([snp.as_str(), s.genes()[*j].as_str()])
            .map_err(|e| write_err(gene_map_path, e))?;
    }
    w.flush().map_err(|e| write_err(gene_map_path, e))?;

    let mut w = csv::Writer::from_path(survival_path).map_err(|e| write_err(survival_path, e))?;
    w.write_record(["subject_id", "subtype", "time", "event"])
        .map_err(|e| write_err(survival_path, e))?;
    for c in &ms.cohorts {
        for i in 0..c.n() {
            let t = format!("{}", c.time[i]);
            let e = if c.event[i] { "1" } else { "0" };
            w.write_record([c.subject_ids[i].as_str(), c.label.as_str(), t.as_str(), e])
                .map_err(|e| write_err(survival_path, e))?;
        }
    }
    w.flush().map_err(|e| write_err(survival_path, e))?;

    // Column position of every SNP within each subtype.
    let mut pos: Vec<HashMap<&str, usize>> = vec![HashMap::new(); s.n_subtypes()];
    for b in s.blocks() {
        for (i, snp) in b.snp_ids.iter().enumerate() {
            pos[b.subtype].insert(snp.as_str(), b.cols.start + i);
        }
    }
    let mut w = csv::Writer::from_path(genotype_path).map_err(|e| write_err(genotype_path, e))?;
    let mut header = vec!["subject_id".to_string(), "subtype".to_string()];
    header.extend(order.iter().map(|(snp, _)| snp.clone()));
    w.write_record(&header).map_err(|e| write_err(genotype_path, e))?;
    for (m, c) in ms.cohorts.iter().enumerate() {
        for i in 0..c.n() {
            let mut rec = vec![c.subject_ids[i].clone(), c.label.clone()];
            for (snp, _) in &order {
                rec.push(match pos[m].get(snp.as_str()) {
                    Some(&col) if !c.genotype[[i, col]].is_nan() => format!("{}", c.genotype[[i, col]]),
                    _ => "NA".to_string(),
                });
            }
            w.write_record(&rec).map_err(|e| write_err(genotype_path, e))?;
        }
    }
    w.flush().map_err(|e| write_err(genotype_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Missing-data policy

/// Counts of what [`filter_missing`] removed and filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilterReport {
    pub subjects_removed: usize,
    pub snps_removed: usize,
    pub imputed: usize,
}

/// Drop subjects with missing fraction above `subject_threshold`, then SNPs
/// (per subtype) above `snp_threshold`, then fill the rest with the
/// per-subtype per-SNP mode (ties resolved to the smallest value).
pub fn filter_missing(
    raw: &MultiStudy,
    subject_threshold: f64,
    snp_threshold: f64,
) -> Result<(MultiStudy, FilterReport)> {
    for t in [subject_threshold, snp_threshold] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {t} not in (0,1)")));
        }
    }
    let s = &raw.structure;
    let mut report = FilterReport::default();
    let mut cohorts = Vec::with_capacity(raw.cohorts.len());
    // Per subtype: surviving original column indices.
    let mut kept_cols: Vec<HashSet<usize>> = Vec::with_capacity(raw.cohorts.len());

    for c in &raw.cohorts {
        let width = c.genotype.ncols();
        let rows: Vec<usize> = (0..c.n())
            .filter(|&i| {
                let miss = c.genotype.row(i).iter().filter(|v| v.is_nan()).count();
                width == 0 || (miss as f64 / width as f64) <= subject_threshold
            })
            .collect();
        report.subjects_removed += c.n() - rows.len();
        if rows.is_empty() {
            return Err(Error::FilteredOut {
                subtype: c.label.clone(),
                what: "subjects",
            });
        }
        let sub = c.select_rows(&rows);
        let cols: Vec<usize> = (0..width)
            .filter(|&col| {
                let miss = sub.genotype.column(col).iter().filter(|v| v.is_nan()).count();
                (miss as f64 / sub.n() as f64) <= snp_threshold
            })
            .collect();
        report.snps_removed += width - cols.len();
        if cols.is_empty() {
            return Err(Error::FilteredOut {
                subtype: c.label.clone(),
                what: "SNPs",
            });
        }
        kept_cols.push(cols.iter().copied().collect());
        let mut geno = sub.genotype.select(ndarray::Axis(1), &cols);
        for mut col in geno.columns_mut() {
            if col.iter().any(|v| v.is_nan()) {
                let fill = column_mode(col.iter().copied());
                for v in col.iter_mut().filter(|v| v.is_nan()) {
                    *v = fill;
                    report.imputed += 1;
                }
            }
        }
        cohorts.push(SubtypeCohort { genotype: geno, ..sub });
    }

    let mut entries = Vec::new();
    for b in s.blocks() {
        let snps: Vec<String> = b
            .snp_ids
            .iter()
            .enumerate()
            .filter(|(i, _)| kept_cols[b.subtype].contains(&(b.cols.start + i)))
            .map(|(_, snp)| snp.clone())
            .collect();
        if !snps.is_empty() {
            entries.push((b.gene, b.subtype, snps));
        }
    }
    let live: Vec<usize> = (0..s.n_genes())
        .filter(|j| entries.iter().any(|e| e.0 == *j))
        .collect();
    let remap: HashMap<usize, usize> = live.iter().enumerate().map(|(i, &j)| (j, i)).collect();
    let entries = entries
        .into_iter()
        .map(|(j, m, snps)| (remap[&j], m, snps))
        .collect();
    let genes = live.iter().map(|&j| s.genes()[j].clone()).collect();
    let structure = GeneStructure::new(genes, s.subtypes().to_vec(), entries)?;
    Ok((MultiStudy::new(cohorts, structure)?, report))
}

fn column_mode(values: impl Iterator<Item = f64>) -> f64 {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for v in values.filter(|v| !v.is_nan()) {
        match counts.iter_mut().find(|(x, _)| *x == v) {
            Some((_, n)) => *n += 1,
            None => counts.push((v, 1)),
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.partial_cmp(&a.0).unwrap()))
        .map_or(0.0, |(v, _)| v)
}
