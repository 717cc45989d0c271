use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;

use vcl_core::continual::{
    read_sigma_snapshots, run_continual, write_sigma_snapshots, CoresetConfig, CoresetUsage,
    RunConfig, TaskPair,
};
use vcl_core::coresets::{
    read_coresets_bin, read_coresets_csv, write_coresets_bin, write_coresets_csv, Coreset,
    CoresetMethod, SteinConfig,
};
use vcl_core::math::{Rng, Tensor2};
use vcl_core::tasks::{
    load_idx, load_mnist_split, split_tasks, Split, TaskData, DEFAULT_SPLIT_PAIRS,
};

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend(d.to_be_bytes());
    }
    b.extend(payload);
    b
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

#[test]
fn gzip_and_plain_idx_files_parse_identically() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 2 * 3).map(|i| (i * 14) as u8).collect();
    let images = idx_bytes(2051, &[3, 2, 3], &pixels);
    let labels = idx_bytes(2049, &[3], &[9, 0, 4]);
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    };
    let plain = load_idx(&write("i", images.clone()), &write("l", labels.clone())).unwrap();
    let packed = load_idx(&write("i.gz", gzip(&images)), &write("l.gz", gzip(&labels))).unwrap();
    assert_eq!(plain, packed);
    assert_eq!(plain.0.shape(), (3, 6));
    assert_eq!(plain.0.get(2, 5), 238.0 / 255.0);
    assert_eq!(plain.1, vec![9, 0, 4]);
}

#[test]
fn bundled_mnist_loads() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let train = load_mnist_split(&dir, Split::Train).unwrap();
    let test = load_mnist_split(&dir, Split::Test).unwrap();
    assert_eq!(train.input_dim(), 784);
    assert_eq!(train.len() + test.len(), 10_000);
    assert!(train.all_pixels_in_unit_range() && test.all_pixels_in_unit_range());
    let tasks = split_tasks(&train, &DEFAULT_SPLIT_PAIRS).unwrap();
    assert_eq!(tasks.iter().map(TaskData::len).sum::<usize>(), train.len());
}

fn blob_task(rng: &mut Rng, n: usize, head: usize) -> TaskData {
    let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
    let x = Tensor2::from_fn(n, 6, |r, c| {
        let centre = if (c % 2 == 0) == (labels[r] == 0) {
            0.25
        } else {
            0.75
        };
        (centre + 0.1 * rng.standard_normal()).clamp(0.0, 1.0)
    });
    TaskData::classification("blobs", x, labels, 2, head).unwrap()
}

#[test]
fn multi_head_run_freezes_heads_and_exports_round_trip() {
    let mut rng = Rng::new(11);
    let stream: Vec<TaskPair> = (0..3)
        .map(|h| TaskPair {
            train: blob_task(&mut rng, 80, h),
            test: blob_task(&mut rng, 40, h),
        })
        .collect();
    let mut config = RunConfig {
        hidden: vec![8],
        coreset: Some(CoresetConfig {
            method: CoresetMethod::Stein,
            size: 6,
            usage: CoresetUsage::Regret,
            stein: SteinConfig {
                steps: 4,
                step_size: 0.05,
            },
        }),
        eval_samples: 4,
        ..RunConfig::default()
    };
    config.train.adam.lr = 0.02;
    let m = run_continual(&stream, &config, 5).unwrap();

    assert_eq!(
        m.accuracy.iter().map(Vec::len).collect::<Vec<_>>(),
        vec![1, 2, 3]
    );
    assert!(m.accuracy.iter().flatten().all(|a| (0.0..=1.0).contains(a)));
    assert!(m.average[2] > 0.8, "{:?}", m.average);

    // head 0 sits right after the trunk; later tasks must not move its σ
    let head0 = m.sigma[0].trunk_len..m.sigma[0].values.len();
    assert_eq!(&m.sigma[0].values[head0.clone()], &m.sigma[2].values[head0]);

    let mut buf = Vec::new();
    write_sigma_snapshots(&m.sigma, &mut buf).unwrap();
    assert_eq!(read_sigma_snapshots(buf.as_slice()).unwrap(), m.sigma);

    // dataset names are not part of either file format
    let key = |cs: &[Coreset]| -> Vec<_> {
        cs.iter()
            .map(|c| {
                (
                    c.source_task,
                    c.method,
                    c.data.head,
                    c.data.inputs.clone(),
                    c.data.labels().unwrap().to_vec(),
                )
            })
            .collect()
    };
    assert_eq!(m.coresets.len(), 3);
    let mut csv = Vec::new();
    write_coresets_csv(&m.coresets, &mut csv).unwrap();
    assert_eq!(
        key(&read_coresets_csv(csv.as_slice()).unwrap()),
        key(&m.coresets)
    );
    let mut bin = Vec::new();
    write_coresets_bin(&m.coresets, &mut bin).unwrap();
    assert_eq!(
        key(&read_coresets_bin(bin.as_slice()).unwrap()),
        key(&m.coresets)
    );
}
