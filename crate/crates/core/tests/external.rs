use std::path::Path;

use nalgebra::DMatrix;

use slime_core::model::{query_model, BatchFileModel, ExternalCommand, ModelHandle, SubprocessModel};
use slime_core::Error;

const ECHO: &str = r#"
import json, sys
log = open(sys.argv[1], "a") if len(sys.argv) > 1 else None
for line in sys.stdin:
    req = json.loads(line)
    if log:
        log.write("%d\n" % len(req["instances"]))
        log.flush()
    print(json.dumps({"predictions": [row[0] for row in req["instances"]]}), flush=True)
"#;

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn rows(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |i, j| i as f64 * 0.5 + j as f64 * 1e-3 + 1.0 / 3.0)
}

#[test]
fn subprocess_echo_returns_first_column_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(dir.path(), "echo.py", ECHO);
    let log = dir.path().join("log.txt");
    let cmd = ExternalCommand::new("python3", vec![script, log.to_string_lossy().into_owned()]);
    let model = ModelHandle::Subprocess(SubprocessModel::new(cmd, 2));
    let x = rows(2500);
    let y = query_model(&model, &x).unwrap();
    let want: Vec<f64> = x.column(0).iter().copied().collect();
    assert_eq!(y, want);
    let lines = std::fs::read_to_string(&log).unwrap();
    assert_eq!(lines, "1000\n1000\n500\n");
}

#[test]
fn subprocess_wrong_length_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(
        dir.path(),
        "short.py",
        "import sys\nfor line in sys.stdin:\n    print('{\"predictions\": [1.0]}', flush=True)\n",
    );
    let model = ModelHandle::Subprocess(SubprocessModel::new(ExternalCommand::new("python3", vec![script]), 2));
    let err = query_model(&model, &rows(1500)).unwrap_err();
    match err {
        Error::ModelQuery { batch, excerpt, .. } => {
            assert_eq!(batch, 0);
            assert!(excerpt.unwrap().contains("predictions"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn subprocess_exit_is_a_model_error() {
    let model = ModelHandle::Subprocess(SubprocessModel::new(ExternalCommand::shell("exit 1"), 2));
    assert!(query_model(&model, &rows(3)).unwrap_err().is_model_query());
    let missing = ModelHandle::Subprocess(SubprocessModel::new(ExternalCommand::new("/nonexistent/model", vec![]), 2));
    assert!(query_model(&missing, &rows(3)).unwrap_err().is_model_query());
}

#[test]
fn batch_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(
        dir.path(),
        "model.sh",
        "#!/bin/sh\nawk -F, 'NR==1 {print \"prediction\"; next} {print $1 + 2 * $2}' \"$1\" > \"$2\"\n",
    );
    let model = ModelHandle::BatchFile(BatchFileModel::new(
        ExternalCommand::new("sh", vec![script]),
        dir.path().join("req.csv"),
        dir.path().join("resp.csv"),
        vec!["a".into(), "b".into()],
    ));
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
    assert_eq!(query_model(&model, &x).unwrap(), vec![5.0, -1.5, 3.0]);
    let header = std::fs::read_to_string(dir.path().join("req.csv")).unwrap();
    assert!(header.starts_with("a,b\n"));
}

#[test]
fn batch_file_bad_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(dir.path(), "bad.sh", "#!/bin/sh\nprintf 'y\\n1\\n' > \"$2\"\n");
    let model = ModelHandle::BatchFile(BatchFileModel::new(
        ExternalCommand::new("sh", vec![script]),
        dir.path().join("req.csv"),
        dir.path().join("resp.csv"),
        vec!["a".into()],
    ));
    assert!(query_model(&model, &DMatrix::zeros(1, 1)).unwrap_err().is_model_query());
}
