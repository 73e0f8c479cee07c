mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use radsurv::cohort::{
    assemble_design_matrix, encode_cohort, read_feature_csv, standardize, tag_cohort,
    write_feature_csv, Block, CohortEntry, DesignMatrix, Exclusion, Standardizer,
};
use radsurv::phantom::write_cohort;
use radsurv::radiomics::extract_all;
use radsurv::study::{
    cohort_split, load_cohort, prepare_cases, render_table, run_perturbation_study,
    write_results_csv, CohortData, MaskVariant, RunManifest, StudyConfig,
};
use radsurv::survival::{
    concordance_index, cox_fit, select_features_cv, CoxFitOptions, CoxModel, CvPoint,
    SurvivalRecord,
};
use radsurv::{Error, FeatureVector};
use serde::{Deserialize, Serialize};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "radsurv",
    version,
    about = "CT/PET radiomics and Cox survival modelling"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML file with run configuration keys; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort directory.
    Simulate(SimulateArgs),
    /// Extract the 36 radiomics features of one modality for every patient.
    Extract(ExtractArgs),
    /// Operations on feature tables.
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
    /// LASSO-Cox feature selection by cross-validation on the training split.
    Select(SelectArgs),
    /// Unpenalised Cox fit on the training split.
    Fit(FitArgs),
    /// Score patients with a fitted model and report C-indices per split.
    Eval(EvalArgs),
    /// Segmentation-quality study: feature sets under mask erosion and dilation.
    Perturb(PerturbArgs),
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Tag CT and PET features as ct., pet. or common. and merge them.
    Compare(CompareArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long = "n")]
    n_patients: Option<usize>,
    #[arg(long)]
    fragile_fraction: Option<f64>,
    /// Add a nodal volume (label 2) to every case.
    #[arg(long)]
    nodal: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Modality {
    Ct,
    Pet,
}

#[derive(Args, Serialize)]
struct ExtractArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, value_enum)]
    modality: Modality,
    /// gt, eroded:R or dilated:R.
    #[arg(long, default_value = "gt")]
    mask: String,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    glcm_distance: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    ct: PathBuf,
    #[arg(long)]
    pet: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ModelInputs {
    #[arg(long)]
    cohort: PathBuf,
    /// Tagged feature CSV from `features compare`.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Comma-separated blocks among clinical, ct, pet, common.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<Block>>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    /// Selection JSON from `select`; without it selection is run first.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PerturbArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Dilation radii, comma-separated.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<u32>>,
    /// Erosion radii, comma-separated.
    #[arg(long, value_delimiter = ',')]
    erode_radii: Option<Vec<u32>>,
    /// Output directory for results.csv, table.txt and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, cfg))
}

/// Resolved configuration plus the subcommand's own arguments.
#[derive(Serialize)]
struct Resolved<'a, A: Serialize> {
    config: &'a RunConfig,
    args: &'a A,
}

fn manifest<A: Serialize>(
    command: &str,
    cfg: &RunConfig,
    args: &A,
    timings: Vec<(String, f64)>,
    path: &Path,
) -> CliResult<()> {
    RunManifest::new(command, cfg.seed, &Resolved { config: cfg, args }, timings)?.write(path)?;
    Ok(())
}

/// `out.csv` gets `out.manifest.json` next to it.
fn sidecar(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn dispatch(command: Command, mut cfg: RunConfig) -> CliResult<()> {
    let t0 = Instant::now();
    match command {
        Command::Simulate(a) => {
            if let Some(n) = a.n_patients {
                cfg.n_patients = n;
            }
            if let Some(f) = a.fragile_fraction {
                cfg.fragile_fraction = f;
            }
            cfg.nodal |= a.nodal;
            let truth = write_cohort(&a.out, &cfg.phantom())?;
            let n = truth.patients.len();
            manifest(
                "simulate",
                &cfg,
                &a,
                vec![("total".into(), t0.elapsed().as_secs_f64())],
                &a.out.join("manifest.json"),
            )?;
            println!("wrote {n} patients to {}", a.out.display());
        }
        Command::Extract(a) => {
            if let Some(w) = a.bin_width {
                match a.modality {
                    Modality::Ct => cfg.bin_width = w,
                    Modality::Pet => cfg.pet_bin_width = w,
                }
            }
            if let Some(d) = a.glcm_distance {
                cfg.glcm_distance = d;
            }
            let variant: MaskVariant = a
                .mask
                .parse()
                .map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let study = cfg.study();
            study.validate()?;
            let data = load_cohort(&a.cohort)?;
            let cases = prepare_cases(&data, &study, variant.radius() as usize + 1)?;
            let modality = match a.modality {
                Modality::Ct => "CT",
                Modality::Pet => "PET",
            };
            let params = study.extraction_params(modality);
            let results: Vec<radsurv::Result<FeatureVector>> = {
                use rayon::prelude::*;
                cases
                    .par_iter()
                    .map(|(_, c)| {
                        let m = variant.apply(&c.mask)?;
                        let img = if modality == "CT" { &c.ct } else { &c.pet };
                        extract_all(img, &m, &params)
                    })
                    .collect()
            };
            let mut rows = Vec::new();
            for ((id, _), r) in cases.iter().zip(results) {
                match r {
                    Ok(f) => rows.push((id.clone(), f)),
                    Err(e @ (Error::EmptyRoi(_) | Error::DegenerateTexture(_))) => {
                        eprintln!("excluded {id}: {}", e.with_context(format!("patient {id}")));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            write_feature_csv(&a.out, &rows)?;
            manifest(
                "extract",
                &cfg,
                &a,
                vec![("total".into(), t0.elapsed().as_secs_f64())],
                &sidecar(&a.out),
            )?;
            println!("{} of {} patients extracted", rows.len(), cases.len());
        }
        Command::Features {
            command: FeaturesCommand::Compare(a),
        } => {
            let ct = read_feature_csv(&a.ct)?;
            let pet: BTreeMap<String, FeatureVector> =
                read_feature_csv(&a.pet)?.into_iter().collect();
            let mut ids = Vec::new();
            let mut cv = Vec::new();
            let mut pv = Vec::new();
            for (id, f) in ct {
                match pet.get(&id) {
                    Some(p) => {
                        ids.push(id);
                        cv.push(f);
                        pv.push(p.clone());
                    }
                    None => eprintln!("skipped {id}: no PET features"),
                }
            }
            let tagged = tag_cohort(&cv, &pv)?;
            if let Some(first) = tagged.first() {
                let common: Vec<&str> =
                    first.names().filter(|n| n.starts_with("common.")).collect();
                println!("{} common features: {}", common.len(), common.join(", "));
            }
            write_feature_csv(&a.out, &ids.into_iter().zip(tagged).collect::<Vec<_>>())?;
            manifest(
                "features compare",
                &cfg,
                &a,
                vec![("total".into(), t0.elapsed().as_secs_f64())],
                &sidecar(&a.out),
            )?;
        }
        Command::Select(a) => {
            if let Some(k) = a.k {
                cfg.k = k;
            }
            let study = cfg.study();
            study.validate()?;
            let prep = prepare(&a.inputs, &study)?;
            let sel = select_features_cv(
                &prep.train.values,
                &prep.y_train,
                &prep.train.column_names,
                &study.cv_options(),
            )?;
            let out = SelectionFile {
                blocks: prep.blocks.clone(),
                seed: cfg.seed,
                lambda: sel.lambda,
                selected: sel.selected.clone(),
                n_train: prep.train.n_rows(),
                exclusions: prep.exclusions.clone(),
                curve: sel.curve,
            };
            write_json(&a.out, &out)?;
            manifest(
                "select",
                &cfg,
                &a,
                vec![("total".into(), t0.elapsed().as_secs_f64())],
                &sidecar(&a.out),
            )?;
            println!(
                "lambda {} selected {} features: {}",
                out.lambda,
                out.selected.len(),
                out.selected.join(", ")
            );
        }
        Command::Fit(a) => {
            let study = cfg.study();
            study.validate()?;
            let prep = prepare(&a.inputs, &study)?;
            let (selected, lambda) = match &a.selection {
                Some(p) => {
                    let s: SelectionFile = read_json(p)?;
                    if s.blocks != prep.blocks {
                        return Err(Failure::Usage(format!(
                            "selection was made on blocks {:?}",
                            s.blocks
                        )));
                    }
                    (s.selected, Some(s.lambda))
                }
                None => {
                    let s = select_features_cv(
                        &prep.train.values,
                        &prep.y_train,
                        &prep.train.column_names,
                        &study.cv_options(),
                    )?;
                    (s.selected, Some(s.lambda))
                }
            };
            let cols = selected
                .iter()
                .map(|n| {
                    prep.train
                        .column_names
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| {
                            Failure::Domain(Error::Data(format!(
                                "selected feature {n} is not a column on the training split"
                            )))
                        })
                })
                .collect::<CliResult<Vec<usize>>>()?;
            let x = prep.train.select_columns(&cols);
            let model = cox_fit(
                &x.values,
                &prep.y_train,
                &selected,
                &CoxFitOptions::default(),
            )?;
            let out = ModelFile {
                blocks: prep.blocks.clone(),
                seed: cfg.seed,
                lambda,
                standardizer: prep.standardizer,
                model,
            };
            write_json(&a.out, &out)?;
            manifest(
                "fit",
                &cfg,
                &a,
                vec![("total".into(), t0.elapsed().as_secs_f64())],
                &sidecar(&a.out),
            )?;
            for (n, b) in out.model.covariate_names.iter().zip(&out.model.beta) {
                println!("{n}\t{b}");
            }
        }
        Command::Eval(a) => {
            let study = cfg.study();
            study.validate()?;
            let m: ModelFile = read_json(&a.model)?;
            let (data, entries) = load_entries(&a.cohort, a.features.as_deref(), &m.blocks)?;
            let (dm, exclusions) = assemble_design_matrix(&entries, &m.blocks)?;
            let z = m.standardizer.apply(&dm)?;
            let cols = m
                .model
                .covariate_names
                .iter()
                .map(|n| {
                    z.column_names
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::Data(format!("model covariate {n} missing")))
                })
                .collect::<radsurv::Result<Vec<usize>>>()?;
            let scores: Vec<f64> = (0..z.n_rows())
                .map(|i| {
                    cols.iter()
                        .zip(&m.model.beta)
                        .map(|(&j, b)| b * z.values[(i, j)])
                        .sum()
                })
                .collect();
            let [train, val, test] = cohort_split(&data.outcomes, &study)?;
            let part: BTreeMap<&str, &str> =
                [("train", &train), ("validation", &val), ("test", &test)]
                    .into_iter()
                    .flat_map(|(name, ids)| ids.iter().map(move |id| (id.as_str(), name)))
                    .collect();
            let y: BTreeMap<&str, &SurvivalRecord> = data
                .outcomes
                .iter()
                .map(|r| (r.patient_id.as_str(), r))
                .collect();
            let mut text = String::from("patient_id,split,score\n");
            let mut by_split: BTreeMap<&str, (Vec<f64>, Vec<SurvivalRecord>)> = BTreeMap::new();
            for (id, s) in z.patient_ids.iter().zip(&scores) {
                let p = part[id.as_str()];
                text.push_str(&format!("{id},{p},{s}\n"));
                let e = by_split.entry(p).or_default();
                e.0.push(*s);
                e.1.push(y[id.as_str()].clone());
            }
            std::fs::write(&a.out, text).map_err(Error::from)?;
            manifest(
                "eval",
                &cfg,
                &a,
                vec![("total".into(), t0.elapsed().as_secs_f64())],
                &sidecar(&a.out),
            )?;
            for name in ["train", "validation", "test"] {
                let c = by_split
                    .get(name)
                    .and_then(|(s, r)| concordance_index(s, r).ok());
                println!(
                    "c_index_{name}\t{}",
                    c.map_or("undefined".to_string(), |v| format!("{v:.4}"))
                );
            }
            if !exclusions.is_empty() {
                println!("excluded {} patients", exclusions.len());
            }
        }
        Command::Perturb(a) => {
            if let Some(r) = &a.radii {
                cfg.dilate_radii = r.clone();
            }
            if let Some(r) = &a.erode_radii {
                cfg.erode_radii = r.clone();
            }
            let study = cfg.study();
            std::fs::create_dir_all(&a.out).map_err(Error::from)?;
            let out = run_perturbation_study(&a.cohort, &study)?;
            write_results_csv(a.out.join("results.csv"), &out.rows)?;
            let table = render_table(&out.rows);
            std::fs::write(a.out.join("table.txt"), &table).map_err(Error::from)?;
            manifest(
                "perturb",
                &cfg,
                &a,
                out.timings,
                &a.out.join("manifest.json"),
            )?;
            print!("{table}");
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionFile {
    blocks: Vec<Block>,
    seed: u64,
    lambda: f64,
    selected: Vec<String>,
    n_train: usize,
    exclusions: Vec<Exclusion>,
    curve: Vec<CvPoint>,
}

/// Everything needed to re-score new patients.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    blocks: Vec<Block>,
    seed: u64,
    lambda: Option<f64>,
    standardizer: Standardizer,
    model: CoxModel,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(v).map_err(Error::from)?)
        .map_err(Error::from)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    Ok(serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?)
}

fn load_entries(
    cohort: &Path,
    features: Option<&Path>,
    blocks: &[Block],
) -> CliResult<(CohortData, Vec<CohortEntry>)> {
    let data = load_cohort(cohort)?;
    if features.is_none() && blocks.iter().any(|b| b.is_imaging()) {
        return Err(Failure::Usage("imaging blocks need --features".into()));
    }
    let imaging: Option<BTreeMap<String, FeatureVector>> = match features {
        Some(p) => Some(read_feature_csv(p)?.into_iter().collect()),
        None => None,
    };
    let enc = encode_cohort(&data.clinical);
    let entries = data
        .clinical
        .iter()
        .zip(enc.vectors)
        .map(|(r, clinical)| {
            let id = r.patient_id.clone();
            let imaging = match &imaging {
                None => Ok(FeatureVector::new()),
                Some(m) => m.get(&id).cloned().ok_or_else(|| Exclusion {
                    patient_id: id.clone(),
                    reason: "MissingFeatures".into(),
                    message: "no row in the feature table".into(),
                }),
            };
            CohortEntry {
                patient_id: id,
                clinical,
                imaging,
            }
        })
        .collect();
    Ok((data, entries))
}

/// Standardised training rows of the requested blocks.
struct Prepared {
    blocks: Vec<Block>,
    train: DesignMatrix,
    y_train: Vec<SurvivalRecord>,
    standardizer: Standardizer,
    exclusions: Vec<Exclusion>,
}

fn prepare(inputs: &ModelInputs, study: &StudyConfig) -> CliResult<Prepared> {
    let mut blocks = inputs.blocks.clone().unwrap_or_else(|| {
        if inputs.features.is_some() {
            vec![Block::Clinical, Block::Ct, Block::Pet, Block::Common]
        } else {
            vec![Block::Clinical]
        }
    });
    blocks.sort();
    blocks.dedup();
    let (data, entries) = load_entries(&inputs.cohort, inputs.features.as_deref(), &blocks)?;
    let (dm, exclusions) = assemble_design_matrix(&entries, &blocks)?;
    let [train, _, _] = cohort_split(&data.outcomes, study)?;
    let train: Vec<String> = train
        .into_iter()
        .filter(|id| dm.patient_ids.contains(id))
        .collect();
    let (train_dm, standardizer) = standardize(&dm.select_rows(&train)?);
    let y: BTreeMap<&str, &SurvivalRecord> = data
        .outcomes
        .iter()
        .map(|r| (r.patient_id.as_str(), r))
        .collect();
    let y_train = train.iter().map(|id| y[id.as_str()].clone()).collect();
    Ok(Prepared {
        blocks,
        train: train_dm,
        y_train,
        standardizer,
        exclusions,
    })
}
