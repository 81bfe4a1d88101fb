//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any asserted criterion fails. A failure that depends on
//! hardware the host lacks is reported but not asserted.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use tensorfleet::client::ClientHandle;
use tensorfleet::eke::{fp, fp_inv, inverse_density_weights, WeightedSampler, DEFAULT_C, DEFAULT_EPSILON};
use tensorfleet::exec::{encode_model, load_model, Device, Layer};
use tensorfleet::launcher::{create_ensemble, Entity, Experiment, RunSettings, Status, Strategy};
use tensorfleet::routing::{crc16, key_slot, plan_topology, tag_for_slot};
use tensorfleet::{DType, LocalCluster, Tensor};

type Outcome = Result<String, Failure>;

struct Failure {
    detail: String,
    asserted: bool,
}

impl From<String> for Failure {
    fn from(detail: String) -> Self {
        Failure { detail, asserted: true }
    }
}

impl From<&str> for Failure {
    fn from(detail: &str) -> Self {
        detail.to_string().into()
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+).into());
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("protocol round trip", protocol_round_trip),
        ("crc16 conformance", crc16_conformance),
        ("inference oracle equivalence", inference_oracle),
        ("batching law", batching_law),
        ("data movement", data_movement),
        ("scaling trends", scaling_trends),
        ("signed log transform", signed_log_suite),
        ("weighted sampling", weighted_sampling),
        ("launcher", launcher),
        ("end-to-end demo", end_to_end_demo),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(Failure { detail, asserted: true }) => {
                failures += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
            Err(Failure { detail, asserted: false }) => {
                println!("FAIL {name} ({secs:.1}s, not asserted): {detail}")
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

fn random_tensor(rng: &mut ChaCha8Rng) -> Tensor {
    let dtype = [DType::F32, DType::F64, DType::I32, DType::I64, DType::U8][rng.gen_range(0..5)];
    let ndim = rng.gen_range(1..=4);
    let shape: Vec<usize> = (0..ndim).map(|_| rng.gen_range(1..=6)).collect();
    let len: usize = shape.iter().product();
    // Raw random bytes cover NaN payloads, infinities and subnormals.
    let data: Vec<u8> = (0..len * dtype.width()).map(|_| rng.gen()).collect();
    Tensor::new(dtype, shape, data).unwrap()
}

fn protocol_round_trip() -> Outcome {
    let t0 = Instant::now();
    let cluster = LocalCluster::start(4).map_err(|e| e.to_string())?;
    let mut client = ClientHandle::connect(&cluster.seed()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tensors: Vec<Tensor> = (0..1000).map(|_| random_tensor(&mut rng)).collect();
    for (i, t) in tensors.iter().enumerate() {
        client.put_tensor(&format!("rt.{i}"), t).map_err(|e| e.to_string())?;
    }
    let mut per_shard = [0usize; 4];
    for (i, t) in tensors.iter().enumerate() {
        let key = format!("rt.{i}");
        per_shard[client.shard_of(&key).map_err(|e| e.to_string())?] += 1;
        let back = client.get_tensor(&key).map_err(|e| e.to_string())?;
        ensure!(back.dtype() == t.dtype() && back.shape() == t.shape(), "{key}: header changed");
        ensure!(back.data() == t.data(), "{key}: payload differs");
    }
    let elapsed = t0.elapsed();
    ensure!(per_shard.iter().all(|&n| n > 0), "some shard held no keys: {per_shard:?}");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("1000 tensors bit-identical, per shard {per_shard:?}, {:.2}s", elapsed.as_secs_f64()))
}

/// Table-driven CRC-16/XMODEM, independent of the library.
fn oracle_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut crc = (i as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
        *slot = crc;
    }
    table
}

fn crc16_conformance() -> Outcome {
    let table = oracle_table();
    // Published table entries: the first row and the final row.
    let first = [
        0x0000, 0x1021, 0x2042, 0x3063, 0x4084, 0x50a5, 0x60c6, 0x70e7, 0x8108, 0x9129, 0xa14a, 0xb16b,
        0xc18c, 0xd1ad, 0xe1ce, 0xf1ef,
    ];
    let last = [
        0xef1f, 0xff3e, 0xcf5d, 0xdf7c, 0xaf9b, 0xbfba, 0x8fd9, 0x9ff8, 0x6e17, 0x7e36, 0x4e55, 0x5e74,
        0x2e93, 0x3eb2, 0x0ed1, 0x1ef0,
    ];
    ensure!(table[..16] == first && table[240..] == last, "oracle table disagrees with published entries");
    let oracle = |data: &[u8]| {
        data.iter().fold(0u16, |crc, &b| (crc << 8) ^ table[((crc >> 8) as u8 ^ b) as usize])
    };
    ensure!(oracle(b"123456789") == 0x31C3, "oracle check value");
    ensure!(crc16(b"123456789") == 0x31C3, "crc16(\"123456789\") = {:#06x}", crc16(b"123456789"));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let len = rng.gen_range(0..40);
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        ensure!(crc16(&bytes) == oracle(&bytes), "mismatch on {bytes:?}");
    }

    let addrs: Vec<String> = (0..16).map(|i| format!("127.0.0.1:{}", 7000 + i)).collect();
    let topo = plan_topology(16, &addrs).map_err(|e| e.to_string())?;
    let mut counts = [0usize; 16];
    for i in 0..100_000 {
        let slot = key_slot(&format!("key:{i}")).map_err(|e| e.to_string())?;
        counts[topo.owner_index(slot)] += 1;
    }
    let expected = 100_000.0 / 16.0;
    let worst = counts.iter().map(|&c| (c as f64 - expected).abs() / expected).fold(0.0, f64::max);
    ensure!(worst <= 0.05, "worst shard deviates {:.2}% from uniform: {counts:?}", worst * 100.0);
    Ok(format!("check value 0x31C3, worst shard deviation {:.2}%", worst * 100.0))
}

fn random_layers(rng: &mut ChaCha8Rng) -> (usize, Vec<Layer>) {
    let input = rng.gen_range(1..=16);
    let mut width = input;
    let mut layers = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let out = rng.gen_range(1..=16);
        let weights = (0..width * out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias = (0..out).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layers.push(Layer::dense(width, out, weights, bias));
        match rng.gen_range(0..4) {
            0 => layers.push(Layer::Relu),
            1 => layers.push(Layer::Tanh),
            2 => layers.push(Layer::Affine { scale: rng.gen_range(-2.0..2.0), shift: rng.gen_range(-1.0..1.0) }),
            _ => {}
        }
        width = out;
    }
    (input, layers)
}

/// Naive nested-loop evaluation of `layers` over row-major `rows × width` input.
fn oracle_forward(layers: &[Layer], x: &[f32], rows: usize, width: usize) -> Vec<f32> {
    let mut cur: Vec<Vec<f32>> = x.chunks(width).map(<[f32]>::to_vec).collect();
    assert_eq!(cur.len(), rows);
    for layer in layers {
        for row in cur.iter_mut() {
            *row = match layer {
                Layer::Dense { inputs, outputs, weights, bias } => (0..*outputs)
                    .map(|o| {
                        let mut sum = 0f32;
                        for i in 0..*inputs {
                            sum += row[i] * weights[o * inputs + i];
                        }
                        sum + bias[o]
                    })
                    .collect(),
                Layer::Relu => row.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
                Layer::Tanh => row.iter().map(|v| v.tanh()).collect(),
                Layer::Affine { scale, shift } => row.iter().map(|v| v * scale + shift).collect(),
            };
        }
    }
    cur.concat()
}

fn inference_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    for case in 0..100 {
        let (width, layers) = random_layers(&mut rng);
        let model = load_model(&encode_model(&layers)).map_err(|e| format!("model {case}: {e}"))?;
        let rows = rng.gen_range(1..=8);
        let x: Vec<f32> = (0..rows * width).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let got = model
            .run(&Tensor::from_f32(vec![rows, width], &x).unwrap())
            .map_err(|e| format!("model {case}: {e}"))?
            .to_f32_vec()
            .unwrap();
        let want = oracle_forward(&layers, &x, rows, width);
        ensure!(got.len() == want.len(), "model {case}: {} outputs, oracle {}", got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            let rel = f64::from((a - b).abs()) / f64::from(b.abs().max(f32::MIN_POSITIVE));
            worst = worst.max(rel);
        }
    }
    ensure!(worst <= 1e-6, "max relative error {worst:e}");
    Ok(format!("100 models, max relative error {worst:e}"))
}

fn batching_law() -> Outcome {
    let cluster = LocalCluster::start(1).map_err(|e| e.to_string())?;
    let seed = cluster.seed();
    let width = 128;
    let weights: Vec<f32> = (0..width * width).map(|i| ((i % 13) as f32 - 6.0) / 64.0).collect();
    let layers: Vec<Layer> = (0..6)
        .flat_map(|_| [Layer::dense(width, width, weights.clone(), vec![0.01; width]), Layer::Tanh])
        .collect();
    let blob = encode_model(&layers);
    let mut admin = ClientHandle::connect(&seed).map_err(|e| e.to_string())?;
    admin.set_model("heavy", &blob, 10_000, Device::Cpu).map_err(|e| e.to_string())?;
    let local = load_model(&blob).unwrap();

    let n = 64;
    let barrier = Arc::new(Barrier::new(n));
    let handles: Vec<_> = (0..n)
        .map(|id| {
            let (seed, barrier) = (seed.clone(), Arc::clone(&barrier));
            thread::spawn(move || {
                let mut c = ClientHandle::connect(&seed).unwrap();
                let x: Vec<f32> = (0..2 * width).map(|i| ((i * 31 + id * 7) % 17) as f32 / 17.0 - 0.5).collect();
                let x = Tensor::from_f32(vec![2, width], &x).unwrap();
                c.put_tensor(&format!("x{id}"), &x).unwrap();
                barrier.wait();
                c.run_model("heavy", &[&format!("x{id}")], &[&format!("y{id}")]).unwrap();
                (x, c.get_tensor(&format!("y{id}")).unwrap())
            })
        })
        .collect();
    let mut served = Vec::new();
    let mut sequential = Vec::new();
    for h in handles {
        let (x, y) = h.join().map_err(|_| "client thread panicked".to_string())?;
        served.extend(y.to_f32_vec().unwrap());
        sequential.extend(local.run(&x).unwrap().to_f32_vec().unwrap());
    }
    ensure!(
        served.iter().map(|v| v.to_bits()).eq(sequential.iter().map(|v| v.to_bits())),
        "batched outputs differ from sequential runs"
    );
    let stats = admin.info(0).map_err(|e| e.to_string())?;
    ensure!(stats.model_runs == 64, "model_runs {}", stats.model_runs);
    ensure!(stats.batch_executions < 64, "batch_executions {}", stats.batch_executions);
    Ok(format!("model_runs 64, batch_executions {}", stats.batch_executions))
}

fn data_movement() -> Outcome {
    let cluster = LocalCluster::start(4).map_err(|e| e.to_string())?;
    let mut client = ClientHandle::connect(&cluster.seed()).map_err(|e| e.to_string())?;
    let blob = encode_model(&[
        Layer::dense(5, 3, (0..15).map(|i| i as f32 * 0.2 - 1.4).collect(), vec![0.1, 0.2, 0.3]),
        Layer::Tanh,
    ]);
    client.set_model("join", &blob, 8, Device::Cpu).map_err(|e| e.to_string())?;
    let a_vals = [1.0f32, -2.0, 0.5, 3.0, 0.25, -1.0];
    let b_vals = [4.0f32, 0.0, -0.5, 2.0, 1.5, -3.0, 0.75, 0.125, 6.0];
    let a = Tensor::from_f32(vec![3, 2], &a_vals).unwrap();
    let b = Tensor::from_f32(vec![3, 3], &b_vals).unwrap();
    // Local composition: concatenate columns, then evaluate naively.
    let joined: Vec<f32> = (0..3).flat_map(|r| [&a_vals[r * 2..r * 2 + 2], &b_vals[r * 3..r * 3 + 3]].concat()).collect();
    let layers = load_model(&blob).unwrap().layers().to_vec();
    let expected = oracle_forward(&layers, &joined, 3, 5);

    let tag = |client: &ClientHandle, i: usize| tag_for_slot(client.topology().shards()[i].slots.0);
    let mut placements = 0;
    for i in 0..4 {
        for j in 0..4 {
            let ka = format!("{{{}}}a", tag(&client, i));
            let kb = format!("{{{}}}b", tag(&client, j));
            let out = format!("{{{}}}y{i}{j}", tag(&client, (i + 2) % 4));
            client.put_tensor(&ka, &a).map_err(|e| e.to_string())?;
            client.put_tensor(&kb, &b).map_err(|e| e.to_string())?;
            let before = cluster.keys_resident();
            client.run_model("join", &[&ka, &kb], &[&out]).map_err(|e| format!("({i},{j}): {e}"))?;
            let y = client.get_tensor(&out).map_err(|e| e.to_string())?.to_f32_vec().unwrap();
            ensure!(y == expected, "placement ({i},{j}) output differs");
            let after = cluster.keys_resident();
            ensure!(after == before + 1, "placement ({i},{j}) left {} extra keys", after - before - 1);
            client.delete(&out).map_err(|e| e.to_string())?;
            placements += 1;
        }
    }
    Ok(format!("{placements} placements match, no temporaries left"))
}

fn scaling_trends() -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base_port = 20_000 + (std::process::id() % 2_000) as u16 * 16;
    let t0 = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(["run", "--clients", "2,8,32", "--shards", "1,4", "--iters", "10", "--min-samples", "200"])
        .arg("--base-port")
        .arg(base_port.to_string())
        .arg("--out")
        .arg(out.path())
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    ensure!(status.status.success(), "bench failed: {}", String::from_utf8_lossy(&status.stderr));
    ensure!(elapsed < Duration::from_secs(600), "matrix took {elapsed:?}");
    let means = run_model_means(&out.path().join("summary.csv"))?;
    let mean = |c: usize, s: usize| means.get(&(c, s)).copied().ok_or(format!("no run_model row for {c}x{s}"));

    let trend = [mean(2, 1)?, mean(8, 1)?, mean(32, 1)?];
    ensure!(
        trend.windows(2).all(|w| w[1] >= 0.9 * w[0]),
        "1-shard run_model mean not non-decreasing in clients: {trend:?}"
    );
    let (one, four) = (mean(32, 1)?, mean(32, 4)?);
    let detail = format!(
        "1-shard means {:.3e}/{:.3e}/{:.3e} s; at 32 clients 1 shard {one:.3e} s, 4 shards {four:.3e} s; {:.0}s",
        trend[0], trend[1], trend[2], elapsed.as_secs_f64()
    );
    if four <= one {
        return Ok(detail);
    }
    // Extra shards only relieve contention when there are cores for them to run on.
    let cores = thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!("4 shards slower than 1 at 32 clients on {cores} core(s): {detail}");
    Err(Failure { detail, asserted: cores >= 4 })
}

fn run_model_means(path: &Path) -> Result<BTreeMap<(usize, usize), f64>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty summary")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("no {name} column"));
    let (ci, si, ai, mi) = (col("clients")?, col("shards")?, col("api")?, col("mean")?);
    let mut means = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f[ai] == "run_model" {
            let parse = |s: &str| s.parse::<usize>().map_err(|e| e.to_string());
            let m = f[mi].parse::<f64>().map_err(|e| e.to_string())?;
            means.insert((parse(f[ci])?, parse(f[si])?), m);
        }
    }
    Ok(means)
}

fn signed_log_suite() -> Outcome {
    let c = DEFAULT_C;
    ensure!(c == 36.0, "default C is {c}");
    ensure!(fp(0.0, c) == 0.0 && fp_inv(0.0, c, DEFAULT_EPSILON) == Ok(0.0), "zero is not fixed");
    let mut worst = 0f64;
    let mut count = 0;
    // Logarithmic sweep of |x| over [1e-15, 1e6], both signs.
    for k in 0..=21_000 {
        let mag = 10f64.powf(-15.0 + k as f64 * 1e-3);
        for x in [mag, -mag] {
            let y = fp(x, c);
            ensure!(fp(-x, c) == -y, "fp not odd at {x:e}");
            let back = fp_inv(y, c, DEFAULT_EPSILON).map_err(|e| format!("fp_inv at {x:e}: {e}"))?;
            worst = worst.max(((back - x) / x).abs());
            count += 1;
        }
    }
    ensure!(worst <= 1e-12, "round trip relative error {worst:e}");
    ensure!(fp(1.0, c) == 36.0 && fp(-1.0, c) == -36.0, "C=36 offset not applied");
    ensure!(fp_inv(1.0, c, DEFAULT_EPSILON).is_err(), "value inside the gap accepted");
    Ok(format!("{count} points, max round-trip relative error {worst:e}"))
}

fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize, picks: impl Iterator<Item = usize>) -> Vec<usize> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for i in picks {
        counts[(((values[i] - lo) / width) as usize).min(bins - 1)] += 1;
    }
    counts
}

fn occupied_ratio(counts: &[usize]) -> f64 {
    let occupied = counts.iter().filter(|&&c| c > 0);
    let max = occupied.clone().max().copied().unwrap_or(0) as f64;
    let min = occupied.min().copied().unwrap_or(1) as f64;
    max / min
}

fn weighted_sampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dist = LogNormal::new(-3.0, 1.5).unwrap();
    let n = 100_000;
    let logs: Vec<f64> = (0..n).map(|_| f64::ln(dist.sample(&mut rng))).collect();
    let weights = inverse_density_weights(&logs, 64).map_err(|e| e.to_string())?;
    let (lo, hi) = logs.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));

    let mut sampler = WeightedSampler::new(&weights, 5).map_err(|e| e.to_string())?;
    let unweighted = occupied_ratio(&bin_counts(&logs, lo, hi, 64, 0..n));
    let weighted = occupied_ratio(&bin_counts(&logs, lo, hi, 64, sampler.draw(n).into_iter()));
    ensure!(weighted < unweighted, "weighted ratio {weighted} not below unweighted {unweighted}");

    // Deciles of samples ordered by weight.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights.weights[a].total_cmp(&weights.weights[b]));
    let mut decile_of = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        decile_of[i] = rank * 10 / n;
    }
    let mut expected = [0f64; 10];
    for i in 0..n {
        expected[decile_of[i]] += weights.weights[i];
    }
    let draws = 1_000_000;
    let mut observed = [0usize; 10];
    for i in sampler.draw(draws) {
        observed[decile_of[i]] += 1;
    }
    let worst = (0..10)
        .map(|d| (observed[d] as f64 / draws as f64 - expected[d]).abs() / expected[d])
        .fold(0.0, f64::max);
    ensure!(worst <= 0.02, "decile frequency off by {:.2}%", worst * 100.0);
    Ok(format!(
        "bin ratio weighted {weighted:.1} vs unweighted {unweighted:.1}; worst decile error {:.2}%",
        worst * 100.0
    ))
}

fn launcher() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let template = tmp.path().join("run.nml");
    std::fs::write(&template, "&run\n  name = ';name;'\n  steps = ;steps;\n/\n").map_err(|e| e.to_string())?;
    let params: BTreeMap<String, Vec<String>> =
        [("name".to_string(), vec!["ocean".to_string()]), ("steps".to_string(), vec!["40".to_string()])].into();
    let settings = RunSettings::new("/bin/sh").args(["-c", "sleep 2; cat run.nml"]);
    let mut ens = create_ensemble("rep", &params, Strategy::Replicas(12), settings, vec![template])
        .map_err(|e| e.to_string())?;
    let exp = Experiment::new(tmp.path().join("exp")).map_err(|e| e.to_string())?;
    exp.generate(&mut ens).map_err(|e| e.to_string())?;

    let expected = "&run\n  name = 'ocean'\n  steps = 40\n/\n";
    let dirs: Vec<_> = ens.members().iter().map(|m| m.dir().map(Path::to_path_buf)).collect::<Option<_>>().ok_or("member without directory")?;
    ensure!(dirs.len() == 12, "{} members", dirs.len());
    for d in &dirs {
        let text = std::fs::read_to_string(d.join("run.nml")).map_err(|e| format!("{}: {e}", d.display()))?;
        ensure!(text == expected, "{} rendered {text:?}", d.display());
    }

    let t0 = Instant::now();
    exp.start(&mut ens, false).map_err(|e| e.to_string())?;
    let start_time = t0.elapsed();
    ensure!(start_time < Duration::from_secs(1), "non-blocking start took {start_time:?}");
    let statuses = exp.wait(&mut ens);
    ensure!(statuses.iter().all(|(_, s)| *s == Status::Completed), "statuses {statuses:?}");
    for m in ens.members() {
        let out = std::fs::read_to_string(exp.root().join(&m.name).join(format!("{}.out", m.name))).map_err(|e| e.to_string())?;
        ensure!(out == expected, "{} printed {out:?}", m.name);
    }
    ensure!(ens.members_mut().len() == 12, "member count changed");
    Ok(format!("12 directories rendered, start returned in {:.0} ms, all completed", start_time.as_secs_f64() * 1e3))
}

fn end_to_end_demo() -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = Command::new(env!("CARGO_BIN_EXE_eke-demo"))
        .args(["--grid", "64,64", "--shards", "2", "--out"])
        .arg(out.path())
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&run.stdout);
    ensure!(run.status.success(), "eke-demo failed: {stdout}{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(out.path().join("eke.csv")).map_err(|e| e.to_string())?;
    let values: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, String>>()?;
    ensure!(values.len() == 64 * 64, "{} values", values.len());
    ensure!(values.iter().all(|&v| v > 0.0), "non-positive EKE value");
    let diff = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max relative difference from local pipeline: "))
        .ok_or("no difference line")?
        .parse::<f64>()
        .map_err(|e| e.to_string())?;
    ensure!(diff <= 1e-6, "difference {diff:e}");
    Ok(format!("4096 positive values, max relative difference {diff:e}"))
}
