//! Local experiment launcher: parameterized models and ensembles, input
//! file generation, process lifecycle, and the orchestrator shards.
//!
//! Template files reference parameters as `;name;`. Generation copies
//! each template into `<experiment>/<member>/` with every token replaced
//! by the member's value; a token without a matching parameter is an
//! error.

mod orchestrator;
mod process;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use orchestrator::{launch_orchestrator, Orchestrator, OrchestratorConfig};
pub use process::{pid_alive, signal_terminate};

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("step strategy needs equal-length parameter lists")]
    UnequalLengths,
    #[error("no parameter values to permute")]
    EmptyParams,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("member {member}: template references unknown parameter {name:?}")]
    MissingParam { member: String, name: String },
    #[error("template not found: {0}")]
    TemplateNotFound(PathBuf),
    #[error("{0} has not been generated")]
    NotGenerated(String),
    #[error("{0} is already running")]
    AlreadyRunning(String),
    #[error("failed to spawn {member}: {source}")]
    SpawnFailed { member: String, source: io::Error },
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("shard {shard} did not become ready: {detail}")]
    ShardStartTimeout { shard: u32, detail: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, LaunchError>;

/// How to run one member's executable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub executable: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    /// Overrides the generated member directory as the working directory.
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    /// Identical processes launched per member.
    #[serde(default = "one")]
    pub processes: usize,
}

fn one() -> usize {
    1
}

impl RunSettings {
    pub fn new(executable: impl Into<PathBuf>) -> Self {
        RunSettings {
            executable: executable.into(),
            args: Vec::new(),
            env: BTreeMap::new(),
            working_dir: None,
            processes: 1,
        }
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    fn validate(&self) -> Result<()> {
        if self.executable.as_os_str().is_empty() {
            return Err(LaunchError::InvalidParams("executable is empty".into()));
        }
        if self.processes == 0 {
            return Err(LaunchError::InvalidParams("process count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Scheduler settings. Recorded in the manifest only; every launch is local.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSettings {
    pub account: Option<String>,
    pub queue: Option<String>,
    pub wall_time: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Created,
    Generated,
    Running,
    Completed,
    Failed,
    Stopped,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Completed | Status::Failed | Status::Stopped)
    }
}

/// One runnable application with its parameters.
#[derive(Debug)]
pub struct ModelHandle {
    pub name: String,
    pub run_settings: RunSettings,
    pub params: BTreeMap<String, String>,
    pub templates: Vec<PathBuf>,
    status: Status,
    dir: Option<PathBuf>,
    procs: process::ProcessGroup,
}

impl ModelHandle {
    pub fn new(
        name: impl Into<String>,
        run_settings: RunSettings,
        params: BTreeMap<String, String>,
        templates: Vec<PathBuf>,
    ) -> Self {
        ModelHandle {
            name: name.into(),
            run_settings,
            params,
            templates,
            status: Status::Created,
            dir: None,
            procs: process::ProcessGroup::default(),
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    /// Generated directory, once [`Experiment::generate`] has run.
    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn pids(&self) -> Vec<u32> {
        self.procs.pids()
    }

    pub fn exit_codes(&self) -> Vec<Option<i32>> {
        self.procs.exit_codes()
    }

    fn refresh(&mut self) -> Status {
        if self.status == Status::Running {
            if let Some(done) = self.procs.poll() {
                self.status = done;
            }
        }
        self.status
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Cartesian product of all parameter lists.
    AllPermutations,
    /// Zip equal-length parameter lists.
    Step,
    /// `n` copies of the same settings and parameters.
    Replicas(usize),
}

#[derive(Debug)]
pub struct Ensemble {
    pub name: String,
    pub strategy: Strategy,
    pub batch_settings: Option<BatchSettings>,
    members: Vec<ModelHandle>,
}

impl Ensemble {
    pub fn members(&self) -> &[ModelHandle] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Something the experiment can generate, start and stop.
pub trait Entity {
    fn entity_name(&self) -> &str;
    fn members(&self) -> &[ModelHandle];
    fn members_mut(&mut self) -> &mut [ModelHandle];
}

impl Entity for ModelHandle {
    fn entity_name(&self) -> &str {
        &self.name
    }

    fn members(&self) -> &[ModelHandle] {
        std::slice::from_ref(self)
    }

    fn members_mut(&mut self) -> &mut [ModelHandle] {
        std::slice::from_mut(self)
    }
}

impl Entity for Ensemble {
    fn entity_name(&self) -> &str {
        &self.name
    }

    fn members(&self) -> &[ModelHandle] {
        &self.members
    }

    fn members_mut(&mut self) -> &mut [ModelHandle] {
        &mut self.members
    }
}

fn permutations(params: &BTreeMap<String, Vec<String>>) -> Vec<BTreeMap<String, String>> {
    let mut sets = vec![BTreeMap::new()];
    for (name, values) in params {
        sets = sets
            .into_iter()
            .flat_map(|set| {
                values.iter().map(move |v| {
                    let mut next = set.clone();
                    next.insert(name.clone(), v.clone());
                    next
                })
            })
            .collect();
    }
    sets
}

/// Expands parameter lists into ensemble members named `<name>_<index>`.
pub fn create_ensemble(
    name: &str,
    params: &BTreeMap<String, Vec<String>>,
    strategy: Strategy,
    run_settings: RunSettings,
    templates: Vec<PathBuf>,
) -> Result<Ensemble> {
    run_settings.validate()?;
    if name.is_empty() {
        return Err(LaunchError::InvalidParams("ensemble name is empty".into()));
    }
    let sets: Vec<BTreeMap<String, String>> = match strategy {
        Strategy::AllPermutations => {
            if params.is_empty() || params.values().any(Vec::is_empty) {
                return Err(LaunchError::EmptyParams);
            }
            permutations(params)
        }
        Strategy::Step => {
            if params.is_empty() || params.values().any(Vec::is_empty) {
                return Err(LaunchError::EmptyParams);
            }
            let len = params.values().next().map(Vec::len).unwrap_or(0);
            if params.values().any(|v| v.len() != len) {
                return Err(LaunchError::UnequalLengths);
            }
            (0..len)
                .map(|i| params.iter().map(|(k, v)| (k.clone(), v[i].clone())).collect())
                .collect()
        }
        Strategy::Replicas(n) => {
            if n == 0 {
                return Err(LaunchError::InvalidParams("replicas requires n >= 1".into()));
            }
            if params.values().any(|v| v.len() != 1) {
                return Err(LaunchError::InvalidParams(
                    "replicas take exactly one value per parameter".into(),
                ));
            }
            let set: BTreeMap<String, String> =
                params.iter().map(|(k, v)| (k.clone(), v[0].clone())).collect();
            vec![set; n]
        }
    };
    let members = sets
        .into_iter()
        .enumerate()
        .map(|(i, set)| {
            ModelHandle::new(format!("{name}_{i}"), run_settings.clone(), set, templates.clone())
        })
        .collect();
    Ok(Ensemble { name: name.to_string(), strategy, batch_settings: None, members })
}

/// Replaces every `;name;` token. Returns the first unknown name on failure.
pub fn substitute(text: &[u8], params: &BTreeMap<String, String>) -> std::result::Result<Vec<u8>, String> {
    let is_ident = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut out = Vec::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        if text[i] == b';' {
            let start = i + 1;
            let mut end = start;
            while end < text.len() && is_ident(text[end]) {
                end += 1;
            }
            if end > start && end < text.len() && text[end] == b';' {
                let name = std::str::from_utf8(&text[start..end]).expect("ascii identifier");
                match params.get(name) {
                    Some(v) => {
                        out.extend_from_slice(v.as_bytes());
                        i = end + 1;
                        continue;
                    }
                    None => return Err(name.to_string()),
                }
            }
        }
        out.push(text[i]);
        i += 1;
    }
    Ok(out)
}

/// Serialized experiment state written to `<experiment>/manifest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: PathBuf,
    pub entities: Vec<ManifestEntity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntity {
    pub name: String,
    pub batch_settings: Option<BatchSettings>,
    pub members: Vec<ManifestMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub name: String,
    pub dir: Option<PathBuf>,
    pub params: BTreeMap<String, String>,
    pub status: Status,
    pub pids: Vec<u32>,
    pub exit_codes: Vec<Option<i32>>,
}

impl Manifest {
    pub fn path(root: &Path) -> PathBuf {
        root.join("manifest")
    }

    pub fn load(root: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(Self::path(root))?;
        serde_json::from_str(&text).map_err(|e| LaunchError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        let tmp = root.join("manifest.tmp");
        fs::write(&tmp, text)?;
        fs::rename(tmp, Self::path(root))?;
        Ok(())
    }
}

/// Report of processes started by [`Experiment::start`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchReport {
    pub started: Vec<(String, Vec<u32>)>,
}

/// Root directory plus the lifecycle operations on entities in it.
#[derive(Debug, Clone)]
pub struct Experiment {
    root: PathBuf,
}

impl Experiment {
    pub fn new(root: impl Into<PathBuf>) -> Result<Experiment> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Experiment { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes every member's input files into `<root>/<member>/`.
    pub fn generate(&self, entity: &mut impl Entity) -> Result<()> {
        for member in entity.members_mut() {
            if member.refresh() == Status::Running {
                return Err(LaunchError::AlreadyRunning(member.name.clone()));
            }
            let mut rendered = Vec::with_capacity(member.templates.len());
            for template in &member.templates {
                let text = fs::read(template)
                    .map_err(|_| LaunchError::TemplateNotFound(template.clone()))?;
                let file_name = template
                    .file_name()
                    .ok_or_else(|| LaunchError::TemplateNotFound(template.clone()))?;
                let body = substitute(&text, &member.params).map_err(|name| {
                    LaunchError::MissingParam { member: member.name.clone(), name }
                })?;
                rendered.push((file_name.to_owned(), body));
            }
            let dir = self.root.join(&member.name);
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::create_dir_all(&dir)?;
            for (file_name, body) in rendered {
                fs::write(dir.join(file_name), body)?;
            }
            member.dir = Some(dir);
            member.status = Status::Generated;
        }
        Ok(())
    }

    /// Launches every member. With `block` the call waits for all of them.
    pub fn start(&self, entity: &mut impl Entity, block: bool) -> Result<LaunchReport> {
        for member in entity.members_mut().iter_mut() {
            match member.refresh() {
                Status::Created => return Err(LaunchError::NotGenerated(member.name.clone())),
                Status::Running => return Err(LaunchError::AlreadyRunning(member.name.clone())),
                _ => {}
            }
        }
        let mut started = Vec::new();
        for member in entity.members_mut() {
            let dir = member.dir.clone().expect("generated members have a directory");
            let cwd = member.run_settings.working_dir.clone().unwrap_or_else(|| dir.clone());
            member.procs = process::ProcessGroup::spawn(&member.name, &member.run_settings, &cwd, &dir)?;
            member.status = Status::Running;
            started.push((member.name.clone(), member.pids()));
        }
        if block {
            self.wait(entity);
        }
        Ok(LaunchReport { started })
    }

    /// Blocks until every member reaches a terminal state.
    pub fn wait(&self, entity: &mut impl Entity) -> Vec<(String, Status)> {
        for member in entity.members_mut() {
            if member.status == Status::Running {
                member.status = member.procs.wait();
            }
        }
        self.poll(entity)
    }

    pub fn poll(&self, entity: &mut impl Entity) -> Vec<(String, Status)> {
        entity
            .members_mut()
            .iter_mut()
            .map(|m| (m.name.clone(), m.refresh()))
            .collect()
    }

    pub fn stop(&self, entity: &mut impl Entity) -> Result<()> {
        for member in entity.members_mut() {
            if member.refresh() == Status::Running {
                member.procs.kill()?;
                member.status = Status::Stopped;
            }
        }
        Ok(())
    }

    /// Stops anything still running and launches again with fresh status.
    pub fn restart(&self, entity: &mut impl Entity, block: bool) -> Result<LaunchReport> {
        self.stop(entity)?;
        self.start(entity, block)
    }

    pub fn manifest<'a>(&self, entities: impl IntoIterator<Item = &'a dyn ManifestSource>) -> Manifest {
        Manifest {
            experiment: self.root.clone(),
            entities: entities.into_iter().map(|e| e.describe()).collect(),
        }
    }

    pub fn write_manifest<'a>(&self, entities: impl IntoIterator<Item = &'a dyn ManifestSource>) -> Result<()> {
        self.manifest(entities).save(&self.root)
    }
}

/// Entities that can describe themselves in the manifest.
pub trait ManifestSource {
    fn describe(&self) -> ManifestEntity;
}

fn describe_members(members: &[ModelHandle]) -> Vec<ManifestMember> {
    members
        .iter()
        .map(|m| ManifestMember {
            name: m.name.clone(),
            dir: m.dir.clone(),
            params: m.params.clone(),
            status: m.status,
            pids: m.pids(),
            exit_codes: m.exit_codes(),
        })
        .collect()
}

impl ManifestSource for Ensemble {
    fn describe(&self) -> ManifestEntity {
        ManifestEntity {
            name: self.name.clone(),
            batch_settings: self.batch_settings.clone(),
            members: describe_members(&self.members),
        }
    }
}

impl ManifestSource for ModelHandle {
    fn describe(&self) -> ManifestEntity {
        ManifestEntity {
            name: self.name.clone(),
            batch_settings: None,
            members: describe_members(std::slice::from_ref(self)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::{Duration, Instant};

    fn params(pairs: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        pairs
            .iter()
            .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| v.to_string()).collect()))
            .collect()
    }

    fn sh(script: &str) -> RunSettings {
        RunSettings::new("/bin/sh").args(["-c", script])
    }

    #[test]
    fn permutation_counts() {
        let p = params(&[("steps", &["10", "20"]), ("dt", &["1", "2"])]);
        let all = create_ensemble("e", &p, Strategy::AllPermutations, sh("true"), vec![]).unwrap();
        assert_eq!(all.len(), 4);
        let step = create_ensemble("e", &p, Strategy::Step, sh("true"), vec![]).unwrap();
        let pairs: Vec<_> = step
            .members()
            .iter()
            .map(|m| (m.params["steps"].clone(), m.params["dt"].clone()))
            .collect();
        assert_eq!(pairs, vec![("10".into(), "1".into()), ("20".into(), "2".into())]);
        let reps = create_ensemble("e", &BTreeMap::new(), Strategy::Replicas(12), sh("true"), vec![])
            .unwrap();
        assert_eq!(reps.len(), 12);
        let names: std::collections::BTreeSet<_> = reps.members().iter().map(|m| &m.name).collect();
        assert_eq!(names.len(), 12);
        assert!(reps.members().iter().all(|m| m.run_settings == sh("true")));
    }

    #[test]
    fn creation_errors() {
        let uneven = params(&[("a", &["1", "2"]), ("b", &["1"])]);
        assert!(matches!(
            create_ensemble("e", &uneven, Strategy::Step, sh("true"), vec![]),
            Err(LaunchError::UnequalLengths)
        ));
        assert!(matches!(
            create_ensemble("e", &BTreeMap::new(), Strategy::AllPermutations, sh("true"), vec![]),
            Err(LaunchError::EmptyParams)
        ));
        assert!(matches!(
            create_ensemble("e", &BTreeMap::new(), Strategy::Replicas(0), sh("true"), vec![]),
            Err(LaunchError::InvalidParams(_))
        ));
        assert!(matches!(
            create_ensemble("e", &BTreeMap::new(), Strategy::Replicas(1), RunSettings::new(""), vec![]),
            Err(LaunchError::InvalidParams(_))
        ));
    }

    #[test]
    fn substitution_rules() {
        let p: BTreeMap<String, String> = [("steps".to_string(), "10".to_string())].into();
        assert_eq!(substitute(b"n=;steps;", &p).unwrap(), b"n=10");
        assert_eq!(substitute(b"a; b ;;", &p).unwrap(), b"a; b ;;");
        assert_eq!(substitute(b"x=;foo;", &p).unwrap_err(), "foo");
    }

    #[test]
    fn generate_writes_member_trees() {
        let tmp = tempfile::tempdir().unwrap();
        let template = tmp.path().join("input.nml");
        fs::write(&template, "n=;steps;\n").unwrap();
        let exp = Experiment::new(tmp.path().join("exp")).unwrap();
        let p = params(&[("steps", &["10", "20"])]);
        let mut ens =
            create_ensemble("ens", &p, Strategy::AllPermutations, sh("true"), vec![template.clone()]).unwrap();
        exp.generate(&mut ens).unwrap();
        let a = fs::read_to_string(exp.root().join("ens_0/input.nml")).unwrap();
        let b = fs::read_to_string(exp.root().join("ens_1/input.nml")).unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("n=10\n", "n=20\n"));
        assert!(ens.members().iter().all(|m| m.status() == Status::Generated));

        exp.generate(&mut ens).unwrap();
        assert_eq!(fs::read_to_string(exp.root().join("ens_0/input.nml")).unwrap(), a);

        fs::write(&template, "x=;foo;").unwrap();
        assert!(matches!(exp.generate(&mut ens), Err(LaunchError::MissingParam { .. })));
        let mut missing = ModelHandle::new("m", sh("true"), BTreeMap::new(), vec![tmp.path().join("nope")]);
        assert!(matches!(exp.generate(&mut missing), Err(LaunchError::TemplateNotFound(_))));
    }

    #[test]
    fn lifecycle() {
        let tmp = tempfile::tempdir().unwrap();
        let exp = Experiment::new(tmp.path()).unwrap();
        let mut ens = create_ensemble("ok", &BTreeMap::new(), Strategy::Replicas(2), sh("echo hi"), vec![]).unwrap();
        assert!(matches!(exp.start(&mut ens, false), Err(LaunchError::NotGenerated(_))));
        exp.generate(&mut ens).unwrap();
        exp.start(&mut ens, true).unwrap();
        assert!(ens.members().iter().all(|m| m.status() == Status::Completed));
        let out = fs::read_to_string(exp.root().join("ok_0/ok_0.out")).unwrap();
        assert_eq!(out, "hi\n");

        let first_pids = ens.members()[0].pids();
        exp.restart(&mut ens, true).unwrap();
        assert_ne!(ens.members()[0].pids(), first_pids);
        assert_eq!(ens.members()[0].status(), Status::Completed);

        let mut bad = ModelHandle::new("bad", sh("exit 3"), BTreeMap::new(), vec![]);
        exp.generate(&mut bad).unwrap();
        exp.start(&mut bad, true).unwrap();
        assert_eq!(bad.status(), Status::Failed);
        assert_eq!(bad.exit_codes(), vec![Some(3)]);
    }

    #[test]
    fn stop_sleeper() {
        let tmp = tempfile::tempdir().unwrap();
        let exp = Experiment::new(tmp.path()).unwrap();
        let mut m = ModelHandle::new("sleeper", sh("sleep 30"), BTreeMap::new(), vec![]);
        exp.generate(&mut m).unwrap();
        let t0 = Instant::now();
        exp.start(&mut m, false).unwrap();
        assert!(t0.elapsed() < Duration::from_secs(1));
        assert!(matches!(exp.start(&mut m, false), Err(LaunchError::AlreadyRunning(_))));
        let pid = m.pids()[0];
        exp.stop(&mut m).unwrap();
        assert_eq!(m.status(), Status::Stopped);
        assert!(!pid_alive(pid));

        exp.write_manifest([&m as &dyn ManifestSource]).unwrap();
        let manifest = Manifest::load(exp.root()).unwrap();
        assert_eq!(manifest.entities[0].members[0].status, Status::Stopped);
    }

    #[test]
    fn spawn_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let exp = Experiment::new(tmp.path()).unwrap();
        let mut m = ModelHandle::new("x", RunSettings::new("/no/such/binary"), BTreeMap::new(), vec![]);
        exp.generate(&mut m).unwrap();
        assert!(matches!(exp.start(&mut m, false), Err(LaunchError::SpawnFailed { .. })));
    }
}
