//! Dictionary matrices of simulated harmonic spectra, one per (drive field, viscosity).
//!
//! Column `i` of `A(k,j)` holds the selected odd harmonics of the particle signal
//! `Vc·dM/dt` of atom `i` under condition `(k, j)`. Columns are not normalized.
//!
//! # File format
//!
//! ```text
//! bytes 0..8    magic "MNPDICT\0"
//! bytes 8..12   format version, u32 LE
//! bytes 12..16  manifest length L, u32 LE
//! bytes 16..16+L  JSON manifest (grid, condition, harmonics, provenance, SHA-256 of payload)
//! rest          M×N complex values, column-major, (re, im) f64 LE pairs
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::magmodel::{mnp_signal, simulate, ModelKind, SimOptions};
use crate::spectral::extract_harmonics;
use crate::types::{count_simulations, Condition, DriveField, HarmonicSet, ParticleGrid, SimConstants, Spectrum, WeightVector};

pub const MAGIC: [u8; 8] = *b"MNPDICT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a condition in the drive-field × viscosity product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CondKey {
    pub k: usize,
    pub j: usize,
}

impl CondKey {
    pub fn new(k: usize, j: usize) -> Self {
        Self { k, j }
    }
}

impl std::fmt::Display for CondKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(k={}, j={})", self.k, self.j)
    }
}

/// How a dictionary was simulated; enough to rebuild it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub model: ModelKind,
    pub options: SimOptions,
    pub constants: SimConstants,
}

/// Seed for one atom simulation, derived from the run seed and the atom's position.
pub fn atom_seed(seed: u64, atom: usize, key: CondKey) -> u64 {
    let mut h = Sha256::new();
    h.update(b"mnpdict/atom");
    for v in [seed, atom as u64, key.k as u64, key.j as u64] {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Complex `M × N` dictionary for one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub key: CondKey,
    pub cond: Condition,
    pub harmonics: HarmonicSet,
    pub grid: ParticleGrid,
    /// Column-major, `harmonics.len()` rows.
    data: Vec<Complex64>,
    pub provenance: Option<Provenance>,
}

impl Dictionary {
    /// Assemble from column-major data.
    pub fn from_parts(
        key: CondKey,
        cond: Condition,
        harmonics: HarmonicSet,
        grid: ParticleGrid,
        data: Vec<Complex64>,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        if harmonics.is_empty() {
            return Err(Error::Shape("dictionary needs at least one harmonic".into()));
        }
        if data.len() != harmonics.len() * grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {}x{} dictionary",
                data.len(),
                harmonics.len(),
                grid.len()
            )));
        }
        if data.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Shape("dictionary entries must be finite".into()));
        }
        Ok(Self { key, cond, harmonics, grid, data, provenance })
    }

    pub fn rows(&self) -> usize {
        self.harmonics.len()
    }

    pub fn cols(&self) -> usize {
        self.grid.len()
    }

    pub fn column(&self, i: usize) -> &[Complex64] {
        let m = self.rows();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[col * self.rows() + row]
    }

    /// Column-major values.
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// `A·x` as a spectrum on this dictionary's harmonics.
    pub fn apply(&self, x: &WeightVector) -> Result<Spectrum> {
        if x.len() != self.cols() {
            return Err(Error::Shape(format!("{} weights for {} atoms", x.len(), self.cols())));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows()];
        for (i, &w) in x.as_slice().iter().enumerate() {
            if w != 0.0 {
                for (o, a) in out.iter_mut().zip(self.column(i)) {
                    *o += a * w;
                }
            }
        }
        Spectrum::new(self.cond.drive.freq, self.harmonics.clone(), out)
    }

    /// Keep only the rows in `subset`.
    pub fn restrict(&self, subset: &HarmonicSet) -> Result<Self> {
        let rows: Vec<usize> = subset
            .indices()
            .iter()
            .map(|&m| {
                self.harmonics.position(m).ok_or_else(|| Error::Shape(format!("harmonic {m} not in dictionary")))
            })
            .collect::<Result<_>>()?;
        let data = (0..self.cols()).flat_map(|i| rows.iter().map(move |&r| (i, r))).map(|(i, r)| self.get(r, i)).collect();
        Self::from_parts(self.key, self.cond, subset.clone(), self.grid.clone(), data, self.provenance)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            key: self.key,
            condition: self.cond,
            grid: self.grid.clone(),
            harmonics: self.harmonics.clone(),
            provenance: self.provenance,
            rows: self.rows(),
            cols: self.cols(),
            payload_sha256: hex::encode(Sha256::digest(self.payload())),
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 16);
        for v in &self.data {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest())?;
        let payload = self.payload();
        let mut out = Vec::with_capacity(16 + manifest.len() + payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parse a dictionary file image; `path` is used in error messages only.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
        if bytes.len() < 16 {
            return Err(bad("truncated header"));
        }
        if bytes[..8] != MAGIC {
            return Err(bad("not a dictionary file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(&format!("manifest: {e}")))?;
        if manifest.format_version != version {
            return Err(bad("manifest version disagrees with header"));
        }
        let payload = &bytes[16 + len..];
        if payload.len() != manifest.rows * manifest.cols * 16 {
            return Err(bad("payload length does not match manifest shape"));
        }
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(Error::Checksum { path: path.to_path_buf() });
        }
        let data = payload
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        if manifest.harmonics.len() != manifest.rows || manifest.grid.len() != manifest.cols {
            return Err(bad("manifest shape disagrees with grid or harmonics"));
        }
        Self::from_parts(manifest.key, manifest.condition, manifest.harmonics, manifest.grid, data, manifest.provenance)
    }
}

/// Self-describing header of a dictionary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub key: CondKey,
    pub condition: Condition,
    pub grid: ParticleGrid,
    pub harmonics: HarmonicSet,
    pub provenance: Option<Provenance>,
    pub rows: usize,
    pub cols: usize,
    pub payload_sha256: String,
}

impl Manifest {
    /// Re-simulate the dictionary described by this manifest.
    pub fn rebuild(&self) -> Result<Dictionary> {
        let prov = self
            .provenance
            .ok_or_else(|| Error::Config("manifest carries no simulation provenance".into()))?;
        build_dictionary(&self.grid, self.key, &self.condition, &self.harmonics, prov.model, &prov.options, &prov.constants)
    }
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_dictionary(dict: &Dictionary, path: &Path) -> Result<()> {
    write_atomic(path, &dict.to_bytes()?)
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    Dictionary::from_bytes(&fs::read(path)?, path)
}

/// Write the manifest of `dict` as standalone pretty-printed JSON.
pub fn export_manifest(dict: &Dictionary, path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(&dict.manifest())?)
}

/// Simulate every atom of `grid` under `cond` and collect the selected harmonics.
///
/// Atoms run in parallel on the current rayon pool; atom `i` uses the seed
/// [`atom_seed`]`(opt.seed, i, key)`, so the result does not depend on the pool size.
pub fn build_dictionary(
    grid: &ParticleGrid,
    key: CondKey,
    cond: &Condition,
    hs: &HarmonicSet,
    model: ModelKind,
    opt: &SimOptions,
    constants: &SimConstants,
) -> Result<Dictionary> {
    let n = cond.drive.samples_per_period(opt.fs);
    if let Some(max) = hs.max() {
        if 2 * max as usize >= n {
            return Err(Error::OutOfBand { harmonic: max, samples: n });
        }
    }
    let columns: Vec<Vec<Complex64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let atom = grid.atom(i);
            let run = SimOptions { seed: atom_seed(opt.seed, i, key), ..*opt };
            let column = simulate(model, &atom, constants, cond, &run)
                .and_then(|mag| mnp_signal(&mag, &atom))
                .and_then(|sig| extract_harmonics(&sig, hs))
                .map_err(|e| Error::Atom { atom: i, source: Box::new(e) })?;
            Ok(column.values)
        })
        .collect::<Result<_>>()?;
    let provenance = Provenance { model, options: *opt, constants: *constants };
    Dictionary::from_parts(key, *cond, hs.clone(), grid.clone(), columns.concat(), Some(provenance))
}

/// Drive fields (index `k`) crossed with viscosities (index `j`, mPa·s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionGrid {
    pub drives: Vec<DriveField>,
    pub viscosities: Vec<f64>,
}

impl ConditionGrid {
    pub fn new(drives: Vec<DriveField>, viscosities: Vec<f64>) -> Result<Self> {
        if drives.is_empty() || viscosities.is_empty() {
            return Err(Error::InvalidParameter("condition grid needs at least one drive field and one viscosity".into()));
        }
        for &eta in &viscosities {
            Condition::new(drives[0], eta)?;
        }
        Ok(Self { drives, viscosities })
    }

    /// The six drive fields and six viscosities of the reference study.
    pub fn reference() -> Self {
        let drives = [10.0, 15.0]
            .iter()
            .flat_map(|&b| [250.0, 1000.0, 2000.0].map(move |f| DriveField { freq: f, amplitude: b }))
            .collect();
        Self { drives, viscosities: vec![0.89, 1.45, 2.08, 3.32, 8.31, 15.33] }
    }

    pub fn len(&self) -> usize {
        self.drives.len() * self.viscosities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> impl Iterator<Item = CondKey> + '_ {
        (0..self.drives.len()).flat_map(move |k| (0..self.viscosities.len()).map(move |j| CondKey::new(k, j)))
    }

    pub fn condition(&self, key: CondKey) -> Result<Condition> {
        let drive = self.drives.get(key.k).ok_or_else(|| Error::Shape(format!("no drive field {}", key.k)))?;
        let eta = self.viscosities.get(key.j).ok_or_else(|| Error::Shape(format!("no viscosity {}", key.j)))?;
        Condition::new(*drive, *eta)
    }
}

/// Everything needed to build a dictionary set.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildPlan {
    pub grid: ParticleGrid,
    pub conditions: ConditionGrid,
    /// Harmonics per drive field.
    pub harmonics: Vec<HarmonicSet>,
    pub model: ModelKind,
    pub options: SimOptions,
    pub constants: SimConstants,
}

impl BuildPlan {
    /// Number of atom simulations in the full set.
    pub fn simulations(&self) -> u64 {
        count_simulations(&self.grid, self.conditions.len())
    }

    /// File for one condition inside a cache directory.
    pub fn cache_file(dir: &Path, key: CondKey) -> PathBuf {
        dir.join(format!("dict_k{}_j{}.mnpd", key.k, key.j))
    }

    fn harmonics_for(&self, k: usize) -> Result<&HarmonicSet> {
        self.harmonics.get(k).ok_or_else(|| Error::Shape(format!("no harmonic set for drive field {k}")))
    }

    fn matches(&self, dict: &Dictionary, key: CondKey, cond: &Condition) -> Result<bool> {
        Ok(dict.key == key
            && dict.cond == *cond
            && dict.grid == self.grid
            && &dict.harmonics == self.harmonics_for(key.k)?
            && dict.provenance == Some(Provenance { model: self.model, options: self.options, constants: self.constants }))
    }
}

/// Build every `(k, j)` dictionary of `plan`.
///
/// With a cache directory, finished dictionaries are persisted one file per
/// condition as soon as they complete, and files that already match the plan
/// are loaded instead of re-simulated. `workers` sets the thread count (default:
/// available parallelism); the output is identical for any value.
pub fn build_set(plan: &BuildPlan, workers: Option<usize>, cache: Option<&Path>) -> Result<DictionarySet> {
    if plan.harmonics.len() != plan.conditions.drives.len() {
        return Err(Error::Shape(format!(
            "{} harmonic sets for {} drive fields",
            plan.harmonics.len(),
            plan.conditions.drives.len()
        )));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| Error::InvalidOptions(format!("thread pool: {e}")))?;
    let mut dicts = BTreeMap::new();
    for key in plan.conditions.keys() {
        let cond = plan.conditions.condition(key)?;
        let file = cache.map(|d| BuildPlan::cache_file(d, key));
        if let Some(path) = file.as_deref().filter(|p| p.exists()) {
            match load_dictionary(path) {
                Ok(d) if plan.matches(&d, key, &cond)? => {
                    log::info!("dictionary {key} loaded from {}", path.display());
                    dicts.insert(key, d);
                    continue;
                }
                Ok(_) => log::warn!("{} belongs to a different plan; rebuilding", path.display()),
                Err(e) => log::warn!("{}: {e}; rebuilding", path.display()),
            }
        }
        log::info!("building dictionary {key}: {} atoms at {} Hz, {} mPa·s", plan.grid.len(), cond.drive.freq, cond.eta);
        let hs = plan.harmonics_for(key.k)?;
        let dict = pool.install(|| build_dictionary(&plan.grid, key, &cond, hs, plan.model, &plan.options, &plan.constants))?;
        if let Some(path) = &file {
            save_dictionary(&dict, path)?;
        }
        dicts.insert(key, dict);
    }
    DictionarySet::new(plan.conditions.clone(), dicts)
}

/// Dictionaries over a full condition grid, sharing one particle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionarySet {
    pub conditions: ConditionGrid,
    dicts: BTreeMap<CondKey, Dictionary>,
}

impl DictionarySet {
    pub fn new(conditions: ConditionGrid, dicts: BTreeMap<CondKey, Dictionary>) -> Result<Self> {
        let first = dicts.values().next().ok_or_else(|| Error::Shape("empty dictionary set".into()))?;
        for key in conditions.keys() {
            let d = dicts.get(&key).ok_or_else(|| Error::Shape(format!("missing dictionary {key}")))?;
            if d.grid != first.grid {
                return Err(Error::Shape(format!("dictionary {key} uses a different particle grid")));
            }
            let same_k = CondKey::new(key.k, 0);
            if d.harmonics != dicts[&same_k].harmonics {
                return Err(Error::Shape(format!("dictionary {key} harmonics differ from {same_k}")));
            }
            if d.cond != conditions.condition(key)? {
                return Err(Error::Shape(format!("dictionary {key} condition does not match the grid")));
            }
        }
        if dicts.len() != conditions.len() {
            return Err(Error::Shape("dictionary keys outside the condition grid".into()));
        }
        Ok(Self { conditions, dicts })
    }

    pub fn get(&self, key: CondKey) -> Result<&Dictionary> {
        self.dicts.get(&key).ok_or_else(|| Error::Shape(format!("no dictionary {key}")))
    }

    pub fn grid(&self) -> &ParticleGrid {
        &self.dicts.values().next().expect("set is non-empty").grid
    }

    pub fn harmonics(&self, k: usize) -> Result<&HarmonicSet> {
        Ok(&self.get(CondKey::new(k, 0))?.harmonics)
    }

    pub fn len(&self) -> usize {
        self.dicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dicts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CondKey, &Dictionary)> {
        self.dicts.iter()
    }

    /// Restrict the harmonics of drive field `k` (all viscosities) to `subset`.
    pub fn restrict(&self, k: usize, subset: &HarmonicSet) -> Result<Self> {
        let dicts = self
            .dicts
            .iter()
            .map(|(key, d)| Ok((*key, if key.k == k { d.restrict(subset)? } else { d.clone() })))
            .collect::<Result<_>>()?;
        Self::new(self.conditions.clone(), dicts)
    }

    /// Save every dictionary into `dir` using the cache file names.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (key, d) in &self.dicts {
            save_dictionary(d, &BuildPlan::cache_file(dir, *key))?;
        }
        Ok(())
    }

    /// Load a set saved with [`DictionarySet::save_dir`] for the given condition grid.
    pub fn load_dir(dir: &Path, conditions: &ConditionGrid) -> Result<Self> {
        let dicts = conditions
            .keys()
            .map(|key| Ok((key, load_dictionary(&BuildPlan::cache_file(dir, key))?)))
            .collect::<Result<_>>()?;
        Self::new(conditions.clone(), dicts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langevin_plan() -> BuildPlan {
        BuildPlan {
            grid: ParticleGrid::new(vec![15.0, 20.0], vec![30.0, 40.0], vec![4.0]).unwrap(),
            conditions: ConditionGrid::new(vec![DriveField::new(1000.0, 10.0).unwrap()], vec![0.89, 3.32]).unwrap(),
            harmonics: vec![HarmonicSet::odd_up_to(15).unwrap()],
            model: ModelKind::LangevinEquilibrium,
            options: SimOptions::default(),
            constants: SimConstants::default(),
        }
    }

    fn small_coupled() -> BuildPlan {
        BuildPlan {
            grid: ParticleGrid::new(vec![18.0], vec![30.0, 40.0], vec![5.0]).unwrap(),
            conditions: ConditionGrid::new(vec![DriveField::new(2000.0, 10.0).unwrap()], vec![0.89, 3.32]).unwrap(),
            harmonics: vec![HarmonicSet::odd_up_to(9).unwrap()],
            model: ModelKind::CoupledBrownNeel,
            options: SimOptions { ensemble_size: 64, ..SimOptions::default() },
            constants: SimConstants::default(),
        }
    }

    #[test]
    fn reference_conditions_count() {
        let c = ConditionGrid::reference();
        assert_eq!(c.len(), 36);
        assert_eq!(count_simulations(&ParticleGrid::table1(), c.len()), 168_480);
    }

    #[test]
    fn langevin_columns_ignore_coating() {
        let set = build_set(&langevin_plan(), Some(1), None).unwrap();
        let d = set.get(CondKey::new(0, 1)).unwrap();
        assert_eq!(d.cols(), 4);
        // atoms 0 and 1 share dc = 15 and differ in ds
        assert_eq!(d.column(0), d.column(1));
        assert_ne!(d.column(0), d.column(2));
    }

    #[test]
    fn single_atom_column_is_its_spectrum() {
        let plan = small_coupled();
        let grid = ParticleGrid::new(vec![18.0], vec![40.0], vec![5.0]).unwrap();
        let key = CondKey::new(0, 1);
        let cond = plan.conditions.condition(key).unwrap();
        let d = build_dictionary(&grid, key, &cond, &plan.harmonics[0], plan.model, &plan.options, &plan.constants).unwrap();
        let atom = grid.atom(0);
        let opt = SimOptions { seed: atom_seed(plan.options.seed, 0, key), ..plan.options };
        let direct = simulate(plan.model, &atom, &plan.constants, &cond, &opt).unwrap();
        let spec = extract_harmonics(&mnp_signal(&direct, &atom).unwrap(), &plan.harmonics[0]).unwrap();
        assert_eq!(d.column(0), &spec.values[..]);
    }

    #[test]
    fn worker_count_and_resume_do_not_change_output() {
        let plan = small_coupled();
        let one = build_set(&plan, Some(1), None).unwrap();
        let many = build_set(&plan, Some(4), None).unwrap();
        assert_eq!(one, many);

        let dir = tempfile::tempdir().unwrap();
        // simulate an interrupted build: only (0, 0) persisted
        save_dictionary(one.get(CondKey::new(0, 0)).unwrap(), &BuildPlan::cache_file(dir.path(), CondKey::new(0, 0))).unwrap();
        let resumed = build_set(&plan, Some(2), Some(dir.path())).unwrap();
        assert_eq!(resumed, one);
        assert_eq!(DictionarySet::load_dir(dir.path(), &plan.conditions).unwrap(), one);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let set = build_set(&langevin_plan(), None, None).unwrap();
        let d = set.get(CondKey::new(0, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mnpd");
        save_dictionary(d, &path).unwrap();
        let back = load_dictionary(&path).unwrap();
        assert_eq!(&back, d);
        assert_eq!(back.to_bytes().unwrap(), d.to_bytes().unwrap());

        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert!(matches!(Dictionary::from_bytes(&bytes, &path), Err(Error::Checksum { .. })));

        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 9;
        assert!(matches!(Dictionary::from_bytes(&bytes, &path), Err(Error::Version { found: 9, .. })));

        let bytes = fs::read(&path).unwrap();
        assert!(matches!(Dictionary::from_bytes(&bytes[..bytes.len() - 16], &path), Err(Error::Format { .. })));
        assert!(matches!(Dictionary::from_bytes(&bytes[..10], &path), Err(Error::Format { .. })));
    }

    #[test]
    fn manifest_rebuilds_dictionary() {
        let set = build_set(&small_coupled(), None, None).unwrap();
        let d = set.get(CondKey::new(0, 1)).unwrap();
        let m = d.manifest();
        assert_eq!(&m.rebuild().unwrap(), d);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        export_manifest(d, &path).unwrap();
        let parsed: Manifest = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(parsed, m);
    }

    #[test]
    fn restrict_selects_rows() {
        let set = build_set(&langevin_plan(), None, None).unwrap();
        let d = set.get(CondKey::new(0, 0)).unwrap();
        let sub = HarmonicSet::new(vec![5, 11]).unwrap();
        let r = d.restrict(&sub).unwrap();
        for i in 0..d.cols() {
            assert_eq!(r.column(i), &[d.get(1, i), d.get(4, i)]);
        }
        assert!(d.restrict(&HarmonicSet::new(vec![17]).unwrap()).is_err());
    }

    #[test]
    fn atom_seeds_differ_across_conditions() {
        let a = atom_seed(1, 3, CondKey::new(0, 0));
        assert_ne!(a, atom_seed(1, 3, CondKey::new(0, 1)));
        assert_ne!(a, atom_seed(1, 3, CondKey::new(1, 0)));
        assert_ne!(a, atom_seed(1, 4, CondKey::new(0, 0)));
        assert_eq!(a, atom_seed(1, 3, CondKey::new(0, 0)));
    }

    #[test]
    fn nyquist_checked_before_simulating() {
        let plan = langevin_plan();
        let cond = plan.conditions.condition(CondKey::new(0, 0)).unwrap();
        let opt = SimOptions { fs: 20_000.0, ..SimOptions::default() };
        let err = build_dictionary(&plan.grid, CondKey::new(0, 0), &cond, &HarmonicSet::new(vec![11]).unwrap(), plan.model, &opt, &plan.constants);
        assert!(matches!(err, Err(Error::OutOfBand { .. })));
    }
}
