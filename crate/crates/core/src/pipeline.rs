//! Stage orchestration over a cohort directory. Every stage reads and
//! writes files so it can run on its own; `run_all` and `run_online` chain
//! them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{
    decompose_instance, iqr_filter, AnatomicalFrame, FrameCues, OrganDescriptor, ReferenceTemplate,
};
use crate::error::{Error, Result, StageContext};
use crate::format::{check_format_version, format_version, read_json, write_json};
use crate::geometry::{marching_cubes, read_obj, read_volume, write_obj, IsoParams, TriMesh, TriangleBvh};
use crate::grounding::{aggregate_targets, read_units, EmbeddingIndex, GroundedTarget, HashedEmbedder, Ontology};
use crate::instantiation::{instantiate_organ, InstantiatedOrgan};
use crate::metrics::{CaseEval, EvalReport};
use crate::phantom::{CaseLayout, CohortManifest, PhantomConfig};
use crate::prior::{fit_priors, select_organ_joints, whitelist_positions, FeatureSpec, OrganPriorAsset, TrainingRecord};
use crate::registration::{register_template, RegistrationConfig};
use crate::rig::{canonicalize_organ, read_rig, write_rig, CanonicalizeConfig, JointWhitelist, RigState};
use crate::targeting::{build_control_state, plan_contacts, resolve_target, ControlState, TargetSpec, TargetingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Cohort root holding `cohort.json`, `templates/` and `cases/`.
    pub cohort: PathBuf,
    /// Root for every derived artifact.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            cohort: "cohort".into(),
            output: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub skin_label: String,
    /// Organ label names to extract; empty means every named label but skin.
    pub organs: Vec<String>,
    pub organ_iso: IsoParams,
    pub skin_iso: IsoParams,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            skin_label: "skin".into(),
            organs: Vec::new(),
            organ_iso: IsoParams::organ(),
            skin_iso: IsoParams::skin(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanonStageConfig {
    pub whitelist: JointWhitelist,
    pub frame_cues: FrameCues,
    #[serde(flatten)]
    pub canonicalize: CanonicalizeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegStageConfig {
    /// When false, instances already in template connectivity are used as-is.
    pub enabled: bool,
    /// Multiplier on every stage's iteration budget.
    pub iteration_scale: f64,
    #[serde(flatten)]
    pub registration: RegistrationConfig,
}

impl Default for RegStageConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            iteration_scale: 1.0,
            registration: RegistrationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorStageConfig {
    /// Joints per organ when the cohort does not name them.
    pub joints_per_organ: usize,
    pub include_distances: bool,
    pub include_angle: bool,
    pub k_beta: usize,
    pub ridge_lambda: f64,
    pub iqr_multiplier: f64,
    /// Leading share of cases used for fitting; the rest are held out.
    pub train_fraction: f64,
    pub scale_epsilon: f64,
}

impl Default for PriorStageConfig {
    fn default() -> Self {
        Self {
            joints_per_organ: 3,
            include_distances: true,
            include_angle: true,
            k_beta: 0,
            ridge_lambda: 0.0,
            iqr_multiplier: 1.5,
            train_fraction: 0.75,
            scale_epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitStageConfig {
    #[serde(flatten)]
    pub targeting: TargetingConfig,
    pub target: TargetSpec<f64>,
}

impl Default for InitStageConfig {
    fn default() -> Self {
        Self {
            targeting: TargetingConfig::default(),
            target: TargetSpec::Centroid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundStageConfig {
    /// Semantic units as JSON lines.
    pub units: Option<PathBuf>,
    /// Organ/location whitelist; a built-in abdominal set when absent.
    pub ontology: Option<PathBuf>,
    pub k: usize,
    pub embedding_dim: usize,
}

impl Default for GroundStageConfig {
    fn default() -> Self {
        Self {
            units: None,
            ontology: None,
            k: 5,
            embedding_dim: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub seed: u64,
    pub ingestion: IngestConfig,
    pub canonicalization: CanonStageConfig,
    pub registration: RegStageConfig,
    pub prior: PriorStageConfig,
    pub initialization: InitStageConfig,
    pub grounding: GroundStageConfig,
    /// Cohort generator settings for the `phantom` stage.
    pub phantom: Option<PhantomConfig>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.registration.validate()?;
        self.initialization.targeting.validate()?;
        let p = &self.prior;
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            return Err(Error::InvalidConfig("train_fraction must lie in (0, 1)".into()));
        }
        if !(p.ridge_lambda >= 0.0) || !(p.iqr_multiplier > 0.0) || !(p.scale_epsilon >= 0.0) {
            return Err(Error::InvalidConfig(
                "ridge_lambda and scale_epsilon must be non-negative, iqr_multiplier positive".into(),
            ));
        }
        if !(self.registration.iteration_scale > 0.0) {
            return Err(Error::InvalidConfig("iteration_scale must be positive".into()));
        }
        if self.grounding.k == 0 || self.grounding.embedding_dim == 0 {
            return Err(Error::InvalidConfig("grounding k and embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Per-item seed derived from the run seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    crate::grounding::fnv1a(label.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Output file locations.
#[derive(Clone, Debug)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn canonical(&self, case: &str, organ: &str) -> PathBuf {
        self.root.join("canonical").join(case).join(format!("{organ}.obj"))
    }

    pub fn registered(&self, case: &str, organ: &str) -> PathBuf {
        self.root.join("registered").join(case).join(format!("{organ}.obj"))
    }

    pub fn diagnostics(&self, case: &str, organ: &str) -> PathBuf {
        self.root.join("registered").join(case).join(format!("{organ}.diag.jsonl"))
    }

    pub fn descriptors(&self, organ: &str) -> PathBuf {
        self.root.join("descriptors").join(format!("{organ}.json"))
    }

    pub fn prior(&self, organ: &str) -> PathBuf {
        self.root.join("priors").join(format!("{organ}.json"))
    }

    pub fn baseline(&self, organ: &str) -> PathBuf {
        self.root.join("priors").join(format!("{organ}.baseline.json"))
    }

    pub fn instance(&self, method: &str, case: &str, organ: &str) -> PathBuf {
        self.root.join("instances").join(method).join(case).join(format!("{organ}.obj"))
    }

    pub fn control_state(&self, case: &str, organ: &str) -> PathBuf {
        self.root.join("targets").join(case).join(format!("{organ}.json"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("eval").join("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("eval").join("report.csv")
    }
}

/// Decomposed training instances of one organ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorTable {
    pub format_version: String,
    pub organ: String,
    pub descriptors: BTreeMap<String, OrganDescriptor<f64>>,
    /// Cases surviving the outlier fences.
    pub kept: Vec<String>,
}

fn ensure_exists(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput {
            path: path.display().to_string(),
            hint: hint.into(),
        })
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub manifest: CohortManifest,
    pub out: OutputLayout,
}

impl Pipeline {
    pub fn open(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let cohort = &config.paths.cohort;
        ensure_exists(&cohort.join(crate::phantom::MANIFEST_FILE), "create a cohort with `phantom` or `ingest`")?;
        let manifest = CohortManifest::load(cohort)?;
        let out = OutputLayout {
            root: config.paths.output.clone(),
        };
        Ok(Self { config, manifest, out })
    }

    pub fn organs(&self) -> Vec<String> {
        self.manifest.templates.keys().cloned().collect()
    }

    /// Leading `train_fraction` of the cases, at least one on each side.
    pub fn split(&self) -> (Vec<String>, Vec<String>) {
        let cases = &self.manifest.cases;
        let n = cases.len();
        let k = ((self.config.prior.train_fraction * n as f64).round() as usize)
            .clamp(1, n.saturating_sub(1).max(1))
            .min(n);
        (cases[..k].to_vec(), cases[k..].to_vec())
    }

    fn layout(&self, case: &str) -> CaseLayout {
        CaseLayout::new(&self.config.paths.cohort, case)
    }

    pub fn template(&self, organ: &str) -> Result<ReferenceTemplate<f64>> {
        let rel = self.manifest.templates.get(organ).ok_or_else(|| Error::MissingInput {
            path: format!("template for `{organ}`"),
            hint: "the cohort manifest lists no template for this organ".into(),
        })?;
        ReferenceTemplate::load(&self.config.paths.cohort.join(rel))
    }

    pub fn rig(&self, case: &str) -> Result<RigState<f64>> {
        let p = self.layout(case).rig();
        ensure_exists(&p, "every case needs rig.json")?;
        read_rig(&p)
    }

    pub fn frame(&self, rig: &RigState<f64>) -> Result<AnatomicalFrame<f64>> {
        AnatomicalFrame::from_rig(rig, &self.config.canonicalization.frame_cues)
    }

    fn items(&self, cases: &[String]) -> Vec<(String, String)> {
        let organs = self.organs();
        cases
            .iter()
            .flat_map(|c| organs.iter().map(move |o| (c.clone(), o.clone())))
            .collect()
    }

    /// Unposes each organ and expresses it in the case's anatomical frame.
    pub fn canonicalize(&self, cases: &[String]) -> Result<()> {
        let cfg = &self.config.canonicalization;
        self.items(cases).par_iter().try_for_each(|(case, organ)| {
            (|| {
                let rig = self.rig(case)?;
                let src = self.layout(case).organ(organ);
                ensure_exists(&src, "organ mesh missing from case directory")?;
                let mesh: TriMesh<f64> = read_obj(&src)?;
                let rest = canonicalize_organ(&mesh, &rig, &cfg.whitelist, &cfg.canonicalize)?;
                let local = self.frame(&rig)?.to_local(&rest);
                write_obj(&self.out.canonical(case, organ), &local)
            })()
            .stage(|| format!("canonicalize {case}/{organ}"))
        })
    }

    /// Deforms each organ template onto the canonical instance.
    pub fn register(&self, cases: &[String]) -> Result<()> {
        let cfg = &self.config.registration;
        let templates = self.templates()?;
        self.items(cases).par_iter().try_for_each(|(case, organ)| {
            (|| {
                let src = self.out.canonical(case, organ);
                ensure_exists(&src, "run `canonicalize` first")?;
                let target: TriMesh<f64> = read_obj(&src)?;
                let template = &templates[organ];
                if cfg.enabled {
                    let mut rc = cfg.registration.clone().with_iteration_scale(cfg.iteration_scale);
                    rc.seed = derive_seed(self.config.seed, &format!("{case}/{organ}"));
                    let reg = register_template(&template.mesh, &target, &rc)?;
                    reg.write_diagnostics(&self.out.diagnostics(case, organ))?;
                    write_obj(&self.out.registered(case, organ), &reg.mesh)
                } else if target.vertex_count() == template.mesh.vertex_count() {
                    write_obj(&self.out.registered(case, organ), &target)
                } else {
                    Err(Error::CountMismatch {
                        source_len: template.mesh.vertex_count(),
                        target_len: target.vertex_count(),
                    })
                }
            })()
            .stage(|| format!("register {case}/{organ}"))
        })
    }

    fn templates(&self) -> Result<BTreeMap<String, ReferenceTemplate<f64>>> {
        self.organs()
            .into_iter()
            .map(|o| Ok((o.clone(), self.template(&o)?)))
            .collect()
    }

    /// Decomposes registered instances and applies the outlier fences.
    pub fn decompose(&self, cases: &[String]) -> Result<()> {
        let eps = self.config.prior.scale_epsilon;
        for organ in self.organs() {
            let template = self.template(&organ)?;
            let descs = cases
                .par_iter()
                .map(|case| {
                    (|| {
                        let src = self.out.registered(case, &organ);
                        ensure_exists(&src, "run `register` first")?;
                        let mesh: TriMesh<f64> = read_obj(&src)?;
                        decompose_instance(&mesh, &template, eps)
                    })()
                    .stage(|| format!("decompose {case}/{organ}"))
                })
                .collect::<Result<Vec<_>>>()?;
            let keep = iqr_filter(&descs, self.config.prior.iqr_multiplier);
            let kept: Vec<String> = cases.iter().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| c.clone()).collect();
            if kept.len() < descs.len() {
                log::info!("{organ}: {} of {} instances rejected as outliers", descs.len() - kept.len(), descs.len());
            }
            write_json(
                &self.out.descriptors(&organ),
                &DescriptorTable {
                    format_version: format_version(),
                    organ: organ.clone(),
                    descriptors: cases.iter().cloned().zip(descs).collect(),
                    kept,
                },
            )?;
        }
        Ok(())
    }

    /// Feature joints for `organ`: the cohort's list if given, otherwise the
    /// whitelisted joints nearest the template centroid in the first case.
    pub fn feature_spec(&self, organ: &str, template: &ReferenceTemplate<f64>, first_case: &str) -> Result<FeatureSpec> {
        let p = &self.config.prior;
        let joints = match self.manifest.feature_joints.get(organ) {
            Some(j) if !j.is_empty() => j.clone(),
            _ => {
                let rig = self.rig(first_case)?;
                let frame = self.frame(&rig)?;
                let cands = whitelist_positions(&rig, &self.config.canonicalization.whitelist, &frame)?;
                select_organ_joints(&cands, &template.centroid, p.joints_per_organ)?
            }
        };
        Ok(FeatureSpec {
            joints,
            include_distances: p.include_distances,
            include_angle: p.include_angle,
            k_beta: p.k_beta,
        })
    }

    /// Fits the skeleton-conditioned prior and the mean-only baseline.
    pub fn fit_priors(&self) -> Result<()> {
        for organ in self.organs() {
            (|| {
                let table_path = self.out.descriptors(&organ);
                ensure_exists(&table_path, "run `decompose` first")?;
                let table: DescriptorTable = read_json(&table_path)?;
                check_format_version(&table.format_version)?;
                let template = self.template(&organ)?;
                let first = table.kept.first().ok_or(Error::TooFewSamples { needed: 2, got: 0 })?;
                let spec = self.feature_spec(&organ, &template, first)?;
                let baseline_spec = FeatureSpec {
                    joints: Vec::new(),
                    include_distances: false,
                    include_angle: false,
                    k_beta: 0,
                };
                for (spec, path) in [(&spec, self.out.prior(&organ)), (&baseline_spec, self.out.baseline(&organ))] {
                    let records = table
                        .kept
                        .iter()
                        .map(|case| {
                            let rig = self.rig(case)?;
                            let d = &table.descriptors[case];
                            Ok(TrainingRecord {
                                features: spec.features_for_rig(&rig, &self.frame(&rig)?)?,
                                delta_c: d.delta_c,
                                ell: d.ell,
                                rotation: d.rotation,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let mut asset = fit_priors(&organ, spec, &records, self.config.prior.ridge_lambda)?;
                    asset.frame_id = template.frame_id.clone();
                    asset.save(&path)?;
                }
                Ok(())
            })()
            .stage(|| format!("fit-priors {organ}"))?;
        }
        Ok(())
    }

    pub fn load_asset(&self, organ: &str) -> Result<OrganPriorAsset<f64>> {
        let p = self.out.prior(organ);
        ensure_exists(&p, "no prior asset; run `fit-priors` first")?;
        OrganPriorAsset::load(&p)
    }

    /// Instantiates `organ` for `case` from the prior at `asset_path`.
    pub fn instantiate_one(&self, case: &str, organ: &str, asset: &OrganPriorAsset<f64>) -> Result<InstantiatedOrgan<f64>> {
        let template = self.template(organ)?;
        let rig = self.rig(case)?;
        let frame = self.frame(&rig)?;
        let features = asset.feature_spec.features_for_rig(&rig, &frame)?;
        instantiate_organ(asset, &template, &features, &frame)
    }

    /// Writes prior and baseline instances for every (case, organ).
    pub fn instantiate(&self, cases: &[String]) -> Result<()> {
        let mut assets = BTreeMap::new();
        for organ in self.organs() {
            let baseline_path = self.out.baseline(&organ);
            ensure_exists(&baseline_path, "no baseline asset; run `fit-priors` first")?;
            assets.insert(organ.clone(), (self.load_asset(&organ)?, OrganPriorAsset::load(&baseline_path)?));
        }
        self.items(cases).par_iter().try_for_each(|(case, organ)| {
            let (prior, baseline) = &assets[organ];
            (|| {
                self.instantiate_one(case, organ, prior)?
                    .save(&self.out.instance("prior", case, organ))?;
                self.instantiate_one(case, organ, baseline)?
                    .save(&self.out.instance("baseline", case, organ))
            })()
            .stage(|| format!("instantiate {case}/{organ}"))
        })
    }

    /// Compares instances with the cases' organ meshes.
    pub fn evaluate(&self, cases: &[String]) -> Result<EvalReport> {
        let rows = self
            .items(cases)
            .par_iter()
            .map(|(case, organ)| {
                (|| {
                    let truth: TriMesh<f64> = read_obj(&self.layout(case).organ(organ))?;
                    ["prior", "baseline"]
                        .iter()
                        .map(|m| {
                            let p = self.out.instance(m, case, organ);
                            ensure_exists(&p, "run `instantiate` first")?;
                            CaseEval::measure(case, organ, m, &read_obj(&p)?, &truth)
                        })
                        .collect::<Result<Vec<_>>>()
                })()
                .stage(|| format!("eval {case}/{organ}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let report = EvalReport::new(self.config.seed, rows.into_iter().flatten().collect());
        if let Some(dir) = self.out.report().parent() {
            std::fs::create_dir_all(dir)?;
        }
        report.save_json(&self.out.report())?;
        report.save_csv(&self.out.report_csv())?;
        Ok(report)
    }

    /// Contact candidates and control state for one organ of one case.
    pub fn init_targets(&self, case: &str, organ: &str) -> Result<ControlState<f64>> {
        (|| {
            let asset = self.load_asset(organ)?;
            let inst = self.instantiate_one(case, organ, &asset)?;
            let mesh_path = self.out.instance("prior", case, organ);
            inst.save(&mesh_path)?;
            let layout = self.layout(case);
            ensure_exists(&layout.skin(), "case has no skin mesh")?;
            let skin: TriMesh<f64> = read_obj(&layout.skin())?;
            let skeleton = if layout.skeleton().exists() {
                Some(TriangleBvh::build(&read_obj::<f64>(&layout.skeleton())?))
            } else {
                None
            };
            let init = &self.config.initialization;
            let target = resolve_target(&inst, &init.target)?;
            let top = plan_contacts(&target, &inst.frame, &skin, skeleton.as_ref(), &init.targeting)?;
            let state = build_control_state(&inst, top, &asset, &mesh_path.display().to_string())?;
            state.save(&self.out.control_state(case, organ))?;
            Ok(state)
        })()
        .stage(|| format!("init-targets {case}/{organ}"))
    }

    /// Offline chain: canonicalize, register, decompose and fit on the
    /// training split, then instantiate and evaluate on the held-out split.
    pub fn run_all(&self) -> Result<EvalReport> {
        let (train, test) = self.split();
        log::info!("{} training cases, {} held out", train.len(), test.len());
        self.canonicalize(&train)?;
        self.register(&train)?;
        self.decompose(&train)?;
        self.fit_priors()?;
        self.instantiate(&test)?;
        self.evaluate(&test)
    }
}

/// Builds the retrieval index named by the grounding configuration.
pub fn build_index(cfg: &GroundStageConfig) -> Result<(EmbeddingIndex, HashedEmbedder)> {
    let units_path = cfg.units.as_ref().ok_or_else(|| Error::MissingInput {
        path: "grounding.units".into(),
        hint: "set a semantic unit JSONL file".into(),
    })?;
    ensure_exists(units_path, "semantic unit JSONL file not found")?;
    let ontology = match &cfg.ontology {
        Some(p) => Ontology::load(p)?,
        None => Ontology::default(),
    };
    let embedder = HashedEmbedder { dim: cfg.embedding_dim };
    let index = EmbeddingIndex::build(read_units(units_path)?, &ontology, &embedder)?;
    Ok((index, embedder))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedUnit {
    pub id: u64,
    pub organ: String,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub query: String,
    pub retrieved: Vec<RetrievedUnit>,
    pub target: GroundedTarget,
}

pub fn ground_query(cfg: &GroundStageConfig, query: &str, k: usize) -> Result<GroundingResult> {
    (|| {
        let (index, embedder) = build_index(cfg)?;
        let hits = index.retrieve(&embedder, query, k)?;
        Ok(GroundingResult {
            query: query.into(),
            retrieved: hits
                .iter()
                .map(|(u, c)| RetrievedUnit {
                    id: u.id,
                    organ: u.organ.clone(),
                    cosine: *c,
                })
                .collect(),
            target: aggregate_targets(&hits)?,
        })
    })()
    .stage(|| "ground")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineResult {
    pub format_version: String,
    pub case: String,
    pub grounding: GroundingResult,
    pub control_state: ControlState<f64>,
}

impl Pipeline {
    /// Query to grounded organ to instantiated anatomy to contacts.
    pub fn run_online(&self, case: &str, query: &str) -> Result<OnlineResult> {
        let grounding = ground_query(&self.config.grounding, query, self.config.grounding.k)?;
        let organ = &grounding.target.organ.name;
        if !self.manifest.templates.contains_key(organ) {
            return Err(Error::MissingInput {
                path: format!("template for `{organ}`"),
                hint: "the grounded organ has no template in this cohort".into(),
            });
        }
        let control_state = self.init_targets(case, organ)?;
        Ok(OnlineResult {
            format_version: format_version(),
            case: case.into(),
            grounding,
            control_state,
        })
    }
}

/// Label volume plus rig to a case directory. The first case ingested for
/// an organ becomes its reference template.
pub fn ingest_case(
    cohort: &Path,
    case: &str,
    volume_header: &Path,
    rig_path: &Path,
    cfg: &IngestConfig,
    cues: &FrameCues,
) -> Result<()> {
    (|| {
        ensure_exists(volume_header, "label volume header not found")?;
        ensure_exists(rig_path, "rig JSON not found")?;
        let grid = read_volume(volume_header)?;
        let rig: RigState<f64> = read_rig(rig_path)?;
        let layout = CaseLayout::new(cohort, case);
        std::fs::create_dir_all(&layout.dir)?;
        write_rig(&layout.rig(), &rig)?;

        let skin_id = grid.label_id(&cfg.skin_label).ok_or_else(|| {
            Error::InvalidVolume(format!("volume has no `{}` label", cfg.skin_label))
        })?;
        write_obj(&layout.skin(), &marching_cubes::<f64>(&grid, skin_id, &cfg.skin_iso)?)?;

        let organs: Vec<String> = if cfg.organs.is_empty() {
            grid.label_names.values().filter(|n| **n != cfg.skin_label).cloned().collect()
        } else {
            cfg.organs.clone()
        };
        let mut manifest = if cohort.join(crate::phantom::MANIFEST_FILE).exists() {
            CohortManifest::load(cohort)?
        } else {
            CohortManifest {
                format_version: format_version(),
                templates: BTreeMap::new(),
                feature_joints: BTreeMap::new(),
                cases: Vec::new(),
                phantom: None,
            }
        };
        let frame = AnatomicalFrame::from_rig(&rig, cues)?;
        for organ in &organs {
            let id = grid
                .label_id(organ)
                .ok_or_else(|| Error::InvalidVolume(format!("volume has no `{organ}` label")))?;
            let mesh = marching_cubes::<f64>(&grid, id, &cfg.organ_iso)?;
            write_obj(&layout.organ(organ), &mesh)?;
            if !manifest.templates.contains_key(organ) {
                let rel = format!("templates/{organ}.obj");
                ReferenceTemplate::new(organ.clone(), frame.to_local(&mesh), format!("acs:{case}"))?
                    .save(&cohort.join(&rel))?;
                manifest.templates.insert(organ.clone(), rel);
            }
        }
        if !manifest.cases.iter().any(|c| c == case) {
            manifest.cases.push(case.into());
        }
        manifest.save(cohort)
    })()
    .stage(|| format!("ingest {case}"))
}
