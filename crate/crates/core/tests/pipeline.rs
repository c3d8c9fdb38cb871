use std::path::Path;

use exguard_core::pipeline::{self, PipelineConfig};

fn analyzer() -> pipeline::Analyzer {
    pipeline::analyzer(&PipelineConfig { workers: 2, ..Default::default() }).unwrap()
}

fn write(dir: &Path, rel: &str, text: &str) {
    let p = dir.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, text).unwrap();
}

const SLEEPER: &str = "class S {\n    void f() {\n        Thread.sleep(5);\n    }\n}\n";

#[test]
fn discovery_keys_nested_files_and_skips_output() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a/b/S.java", SLEEPER);
    write(dir.path(), "T.java", SLEEPER);
    write(dir.path(), "notes.txt", "x");
    write(dir.path(), "out/patched/T.java", SLEEPER);
    let files = pipeline::discover(dir.path(), Some(&dir.path().join("out"))).unwrap();
    let keys: Vec<&str> = files.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(keys, ["T.java", "a/b/S.java"]);
}

#[test]
fn crlf_sources_keep_their_line_endings() {
    let src = SLEEPER.replace('\n', "\r\n");
    let run = analyzer().analyze_sources(&[("S.java".into(), src)]).unwrap();
    let out = &run.patched["S.java"];
    assert!(out.contains("        try {\r\n            Thread.sleep(5);\r\n        } catch(InterruptedException ex) {\r\n"), "{out:?}");
    assert!(out.split('\n').filter(|l| !l.is_empty()).all(|l| l.ends_with('\r')), "{out:?}");
}

#[test]
fn handled_code_is_left_alone() {
    let src = "class S {\n    void f() {\n        try {\n            Thread.sleep(5);\n        } catch (InterruptedException e) {\n            return;\n        }\n    }\n}\n";
    let run = analyzer().analyze_sources(&[("S.java".into(), src.into())]).unwrap();
    assert_eq!(run.patched["S.java"], src);
    assert_eq!(run.report.summary.patches, 0);
}

#[test]
fn outputs_are_written_and_report_excludes_timings() {
    let dir = tempfile::tempdir().unwrap();
    let run = analyzer().analyze_sources(&[("pkg/S.java".into(), SLEEPER.into())]).unwrap();
    let out = dir.path().join("o");
    pipeline::write_outputs(&run, &out).unwrap();
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(!report.contains("_ms"));
    assert!(std::fs::read_to_string(out.join("timings.json")).unwrap().contains("wall_ms"));
    assert!(std::fs::read_to_string(out.join("patched/pkg/S.java")).unwrap().contains("catch(InterruptedException ex)"));
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "workers = 3\noutput = \"elsewhere\"\n[rank]\ngamma = 1.0\n").unwrap();
    let c = PipelineConfig::load(&path).unwrap();
    assert_eq!((c.workers, c.rank.gamma), (3, 1.0));
    assert_eq!(c.output, Path::new("elsewhere"));
    // A high threshold rejects every candidate, so nothing is patched.
    let a = pipeline::analyzer(&c).unwrap();
    let run = a.analyze_sources(&[("S.java".into(), SLEEPER.into())]).unwrap();
    assert_eq!(run.report.summary.patches, 0);
    assert!(!run.report.files[0].units.iter().all(|u| u.rejected.is_empty()));
}
