use std::fs::File;
use std::io;
use std::os::unix::process::ExitStatusExt;
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{LaunchError, RunSettings, Status};

/// Sends SIGTERM to `pid`. Returns false if the process does not exist.
pub fn signal_terminate(pid: u32) -> bool {
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe { libc::kill(pid as libc::pid_t, libc::SIGTERM) == 0 }
}

/// Whether `pid` names a live (non-zombie) process.
pub fn pid_alive(pid: u32) -> bool {
    // SAFETY: signal 0 only probes for existence.
    let exists = unsafe { libc::kill(pid as libc::pid_t, 0) == 0 };
    if !exists {
        return false;
    }
    // Unreaped children still answer kill(0); check /proc for zombies.
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => stat
            .rsplit_once(") ")
            .and_then(|(_, rest)| rest.chars().next())
            .map_or(true, |state| state != 'Z'),
        Err(_) => true,
    }
}

#[derive(Debug)]
struct Proc {
    child: Child,
    exit: Option<ExitStatus>,
}

/// The processes launched for one member.
#[derive(Debug, Default)]
pub(crate) struct ProcessGroup {
    procs: Vec<Proc>,
    stopped: bool,
}

impl ProcessGroup {
    pub fn spawn(name: &str, settings: &RunSettings, cwd: &Path, log_dir: &Path) -> Result<Self, LaunchError> {
        let mut procs = Vec::with_capacity(settings.processes);
        for rank in 0..settings.processes {
            let suffix = if settings.processes == 1 { String::new() } else { format!(".{rank}") };
            let spawn_err = |source: io::Error| LaunchError::SpawnFailed { member: name.to_string(), source };
            let stdout = File::create(log_dir.join(format!("{name}{suffix}.out"))).map_err(spawn_err)?;
            let stderr = File::create(log_dir.join(format!("{name}{suffix}.err"))).map_err(spawn_err)?;
            let child = Command::new(&settings.executable)
                .args(&settings.args)
                .envs(&settings.env)
                .current_dir(cwd)
                .stdin(Stdio::null())
                .stdout(stdout)
                .stderr(stderr)
                .spawn()
                .map_err(spawn_err);
            match child {
                Ok(child) => procs.push(Proc { child, exit: None }),
                Err(e) => {
                    let mut partial = ProcessGroup { procs, stopped: false };
                    let _ = partial.kill();
                    return Err(e);
                }
            }
        }
        Ok(ProcessGroup { procs, stopped: false })
    }

    pub fn pids(&self) -> Vec<u32> {
        self.procs.iter().map(|p| p.child.id()).collect()
    }

    pub fn exit_codes(&self) -> Vec<Option<i32>> {
        self.procs.iter().map(|p| p.exit.and_then(|s| s.code())).collect()
    }

    /// Terminal status once every process has exited.
    pub fn poll(&mut self) -> Option<Status> {
        for p in &mut self.procs {
            if p.exit.is_none() {
                p.exit = p.child.try_wait().ok().flatten();
            }
        }
        self.summary()
    }

    pub fn wait(&mut self) -> Status {
        for p in &mut self.procs {
            if p.exit.is_none() {
                p.exit = p.child.wait().ok();
            }
        }
        self.summary().unwrap_or(Status::Failed)
    }

    fn summary(&self) -> Option<Status> {
        if self.procs.iter().any(|p| p.exit.is_none()) {
            return None;
        }
        let signalled = self.procs.iter().any(|p| {
            matches!(p.exit.and_then(|s| s.signal()), Some(libc::SIGTERM | libc::SIGKILL))
        });
        Some(if self.stopped || signalled {
            Status::Stopped
        } else if self.procs.iter().all(|p| p.exit.is_some_and(|s| s.success())) {
            Status::Completed
        } else {
            Status::Failed
        })
    }

    /// SIGTERM, then SIGKILL after a grace period.
    pub fn kill(&mut self) -> io::Result<()> {
        self.stopped = true;
        for p in &self.procs {
            if p.exit.is_none() {
                signal_terminate(p.child.id());
            }
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            if self.poll().is_some() {
                return Ok(());
            }
            if Instant::now() >= deadline {
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
        for p in &mut self.procs {
            if p.exit.is_none() {
                let _ = p.child.kill();
                p.exit = Some(p.child.wait()?);
            }
        }
        Ok(())
    }
}
