use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use tensorfleet::client::{ClientError, ClientHandle};
use tensorfleet::dataset::Dataset;
use tensorfleet::exec::{encode_model, load_model, Device, Finalize, Layer, ScriptOp, ScriptSpec, Step, Target};
use tensorfleet::protocol::{Command, Status};
use tensorfleet::routing::{tag_for_slot, SlotId};
use tensorfleet::{LocalCluster, Tensor};

/// A key prefix that hashes into shard `index`'s range.
fn on_shard(client: &ClientHandle, index: usize, name: &str) -> String {
    let lo: SlotId = client.topology().shards()[index].slots.0;
    format!("{{{}}}{name}", tag_for_slot(lo))
}

fn small_mlp() -> Vec<u8> {
    encode_model(&[
        Layer::dense(4, 3, (0..12).map(|i| i as f32 * 0.1 - 0.5).collect(), vec![0.1, -0.2, 0.3]),
        Layer::Relu,
        Layer::dense(3, 2, vec![1.0, -1.0, 0.5, 0.25, 2.0, -0.75], vec![0.0, 1.0]),
    ])
}

fn scale_script() -> ScriptSpec {
    ScriptSpec {
        name: "scale".into(),
        arity: 1,
        steps: vec![Step { target: Target::ALL, op: ScriptOp::Affine { a: 3.0, b: 1.0 } }],
        finalize: Finalize::Single,
        output_dtype: None,
    }
}

#[test]
fn tensors_and_datasets_round_trip() {
    let cluster = LocalCluster::start(4).unwrap();
    let mut client = ClientHandle::connect(&cluster.seed()).unwrap();
    let tensors = [
        Tensor::from_f32(vec![2, 2], &[1.0, -2.5, f32::NAN, 4.0]).unwrap(),
        Tensor::from_f64(vec![3], &[0.1, 0.2, 0.3]).unwrap(),
        Tensor::from_i32(vec![1, 1, 2], &[i32::MIN, i32::MAX]).unwrap(),
        Tensor::from_i64(vec![1], &[-7]).unwrap(),
        Tensor::from_u8(vec![4], &[0, 1, 254, 255]).unwrap(),
    ];
    for (i, t) in tensors.iter().enumerate() {
        client.put_tensor(&format!("t{i}"), t).unwrap();
    }
    for (i, t) in tensors.iter().enumerate() {
        let back = client.get_tensor(&format!("t{i}")).unwrap();
        assert_eq!(back.to_bytes(), t.to_bytes());
    }

    let mut ds = Dataset::new("ds");
    ds.add_tensor("a", tensors[0].clone()).unwrap();
    ds.add_meta_string("units", "m/s").unwrap();
    ds.add_meta_scalar("dt", 0.5).unwrap();
    client.put_dataset(&ds).unwrap();
    assert_eq!(client.get_dataset("ds").unwrap().to_bytes(), ds.to_bytes());

    let err = client.get_tensor("ds").unwrap_err();
    assert_eq!(err.status(), Some(Status::WrongKind));
    let err = client.get_tensor("missing").unwrap_err();
    assert_eq!(err.status(), Some(Status::NotFound));
    assert!(client.delete("t0").unwrap());
    assert!(!client.delete("t0").unwrap());
}

#[test]
fn prefix_namespaces_keys() {
    let cluster = LocalCluster::start(2).unwrap();
    let mut a = ClientHandle::connect(&cluster.seed()).unwrap().with_prefix("a.");
    let mut b = ClientHandle::connect(&cluster.seed()).unwrap().with_prefix("b.");
    let t = Tensor::from_i32(vec![1], &[1]).unwrap();
    a.put_tensor("x", &t).unwrap();
    assert!(a.tensor_exists("x").unwrap());
    assert!(!b.tensor_exists("x").unwrap());
}

#[test]
fn data_movement_for_every_placement() {
    let cluster = LocalCluster::start(4).unwrap();
    let mut client = ClientHandle::connect(&cluster.seed()).unwrap();
    let blob = encode_model(&[Layer::dense(4, 1, vec![1.0, 2.0, 3.0, 4.0], vec![0.5])]);
    client.set_model("sum", &blob, 8, Device::Cpu).unwrap();
    let local = load_model(&blob).unwrap();
    let a = Tensor::from_f32(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::from_f32(vec![2, 2], &[-1.0, 0.5, 0.25, 8.0]).unwrap();
    // Column concatenation of [a | b].
    let joined = Tensor::from_f32(vec![2, 4], &[1.0, 2.0, -1.0, 0.5, 3.0, 4.0, 0.25, 8.0]).unwrap();
    let expected = local.run(&joined).unwrap();

    for i in 0..4 {
        for j in 0..4 {
            let ka = on_shard(&client, i, &format!("a{i}{j}"));
            let kb = on_shard(&client, j, &format!("b{i}{j}"));
            let out = on_shard(&client, (i + j) % 4, &format!("y{i}{j}"));
            client.put_tensor(&ka, &a).unwrap();
            client.put_tensor(&kb, &b).unwrap();
            let before = cluster.keys_resident();
            client.reset_counters();
            client.run_model("sum", &[&ka, &kb], &[&out]).unwrap();
            assert_eq!(client.get_tensor(&out).unwrap(), expected, "placement {i},{j}");
            assert_eq!(cluster.keys_resident(), before + 1, "temporaries left at {i},{j}");
            assert_eq!(client.counters().input_transfers, u64::from(i != j));
            assert_eq!(client.counters().output_transfers, u64::from((i + j) % 4 != i));
        }
    }
}

#[test]
fn results_do_not_depend_on_shard_count() {
    let input = Tensor::from_f32(vec![3, 4], &(0..12).map(|i| i as f32 * 0.37 - 2.0).collect::<Vec<_>>())
        .unwrap();
    let mut outputs = Vec::new();
    for n in [1, 2, 4, 8] {
        let cluster = LocalCluster::start(n).unwrap();
        let mut client = ClientHandle::connect(&cluster.seed()).unwrap();
        client.set_model("mlp", &small_mlp(), 4, Device::Cpu).unwrap();
        client.set_script("scale", &scale_script()).unwrap();
        client.put_tensor("x", &input).unwrap();
        client.run_script("scale", &["x"], "scaled").unwrap();
        client.run_model("mlp", &["scaled"], &["y"]).unwrap();
        outputs.push(client.get_tensor("y").unwrap().to_bytes());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn script_errors_surface() {
    let cluster = LocalCluster::start(2).unwrap();
    let mut client = ClientHandle::connect(&cluster.seed()).unwrap();
    client.set_script("scale", &scale_script()).unwrap();
    let t = Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap();
    client.put_tensor("{k}a", &t).unwrap();
    client.put_tensor("{k}b", &t).unwrap();
    let err = client.run_script("scale", &["{k}a", "{k}b"], "{k}c").unwrap_err();
    assert_eq!(err.status(), Some(Status::ExecError));
    assert!(err.to_string().contains("ArityMismatch"), "{err}");
    let err = client.run_script("nope", &["{k}a"], "{k}c").unwrap_err();
    assert_eq!(err.status(), Some(Status::NotFound));
    let err = client.run_model("nope", &["{k}a"], &["{k}c"]).unwrap_err();
    assert_eq!(err.status(), Some(Status::ModelNotFound));
    let err = client.run_model("nope", &["{k}missing"], &["{k}c"]).unwrap_err();
    assert!(matches!(err.status(), Some(Status::ModelNotFound | Status::InputMissing)));
}

#[test]
fn broadcast_failures() {
    let mut cluster = LocalCluster::start(3).unwrap();
    let mut client = ClientHandle::connect(&cluster.seed()).unwrap();
    let err = client.set_model("bad", b"not a model", 1, Device::Cpu).unwrap_err();
    assert_eq!(err.status(), Some(Status::BadModel));

    cluster.kill(2);
    let dead = client.topology().shards()[2].id;
    match client.set_model("m", &small_mlp(), 1, Device::Cpu) {
        Err(ClientError::PartialBroadcast { failed }) => assert_eq!(failed, vec![dead]),
        other => panic!("expected PartialBroadcast, got {other:?}"),
    }
}

#[test]
fn unreachable_seed() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let err = ClientHandle::connect(&format!("127.0.0.1:{port}")).err().unwrap();
    assert!(matches!(err, ClientError::Unreachable { .. }), "{err}");
}

#[test]
fn rejects_other_protocol_versions() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut len = [0u8; 4];
        s.read_exact(&mut len).unwrap();
        let mut frame = vec![0u8; u32::from_le_bytes(len) as usize];
        s.read_exact(&mut frame).unwrap();
        // Same command and id, version 2, status OK, empty body.
        let mut reply = Vec::new();
        reply.extend_from_slice(&8u32.to_le_bytes());
        reply.extend_from_slice(&2u16.to_le_bytes());
        reply.push(frame[2]);
        reply.extend_from_slice(&frame[3..7]);
        reply.push(0);
        s.write_all(&reply).unwrap();
    });
    let err = ClientHandle::connect(&addr).err().unwrap();
    assert!(matches!(err, ClientError::ProtocolVersionMismatch(2)), "{err}");
    server.join().unwrap();
}

#[test]
fn poll_sees_late_writes() {
    let cluster = LocalCluster::start(2).unwrap();
    let seed = cluster.seed();
    let mut client = ClientHandle::connect(&seed).unwrap();
    assert!(!client.poll_tensor("late", Duration::from_millis(5), 2).unwrap());
    let writer = thread::spawn(move || {
        thread::sleep(Duration::from_millis(50));
        let mut c = ClientHandle::connect(&seed).unwrap();
        c.put_tensor("late", &Tensor::from_u8(vec![1], &[1]).unwrap()).unwrap();
    });
    assert!(client.poll_tensor("late", Duration::from_millis(20), 100).unwrap());
    writer.join().unwrap();
}

#[test]
fn many_concurrent_connections() {
    let cluster = LocalCluster::start(2).unwrap();
    let seed = cluster.seed();
    let clients = 40;
    let barrier = Arc::new(Barrier::new(clients));
    let handles: Vec<_> = (0..clients)
        .map(|id| {
            let (seed, barrier) = (seed.clone(), Arc::clone(&barrier));
            thread::spawn(move || {
                let mut c = ClientHandle::connect(&seed).unwrap();
                barrier.wait();
                for n in 0..25 {
                    let t = Tensor::from_i64(vec![2], &[id as i64, n]).unwrap();
                    c.put_tensor(&format!("c{id}.{n}"), &t).unwrap();
                    assert_eq!(c.get_tensor(&format!("c{id}.{n}")).unwrap(), t);
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(cluster.keys_resident(), (clients * 25) as u64);
}

#[test]
fn concurrent_requests_are_batched() {
    let cluster = LocalCluster::start(1).unwrap();
    let seed = cluster.seed();
    let width = 128;
    let weights: Vec<f32> = (0..width * width).map(|i| ((i % 13) as f32 - 6.0) / 64.0).collect();
    let layers: Vec<Layer> = (0..6)
        .flat_map(|_| [Layer::dense(width, width, weights.clone(), vec![0.01; width]), Layer::Tanh])
        .collect();
    let blob = encode_model(&layers);
    ClientHandle::connect(&seed).unwrap().set_model("heavy", &blob, 10_000, Device::Cpu).unwrap();
    let local = load_model(&blob).unwrap();

    let n = 64;
    let barrier = Arc::new(Barrier::new(n));
    let handles: Vec<_> = (0..n)
        .map(|id| {
            let (seed, barrier) = (seed.clone(), Arc::clone(&barrier));
            thread::spawn(move || {
                let mut c = ClientHandle::connect(&seed).unwrap();
                let x: Vec<f32> = (0..2 * width).map(|i| ((i + id) % 7) as f32 / 7.0).collect();
                let x = Tensor::from_f32(vec![2, width], &x).unwrap();
                c.put_tensor(&format!("x{id}"), &x).unwrap();
                barrier.wait();
                c.run_model("heavy", &[&format!("x{id}")], &[&format!("y{id}")]).unwrap();
                (x, c.get_tensor(&format!("y{id}")).unwrap())
            })
        })
        .collect();
    for h in handles {
        let (x, y) = h.join().unwrap();
        assert_eq!(y, local.run(&x).unwrap());
    }
    let stats = ClientHandle::connect(&seed).unwrap().info(0).unwrap();
    assert_eq!(stats.model_runs, 64);
    assert!(stats.batch_executions < 64, "{stats:?}");
}

#[test]
fn counters_track_frames() {
    let cluster = LocalCluster::start(2).unwrap();
    let mut client = ClientHandle::connect(&cluster.seed()).unwrap();
    client.reset_counters();
    client.put_tensor("x", &Tensor::from_u8(vec![1], &[1]).unwrap()).unwrap();
    client.get_tensor("x").unwrap();
    client.ping(1).unwrap();
    assert_eq!(client.counters().frames_for(Command::PutTensor), 1);
    assert_eq!(client.counters().frames_for(Command::GetTensor), 1);
    assert_eq!(client.counters().frames_for(Command::Ping), 1);
    assert_eq!(client.counters().redirects, 0);
    assert_eq!(client.info_all().unwrap().len(), 2);
}
