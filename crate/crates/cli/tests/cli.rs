//! End-to-end tests of the binary: the init/craft/authtx/scan workflow,
//! the run subcommands, the exit-code contract, and report determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sim7702"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sim7702-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        )
    })
}

#[test]
fn init_craft_authtx_scan_workflow() {
    let dir = tmp_dir("workflow");

    let out = run(&["init", "--output", "out"], &dir);
    assert!(out.status.success());
    assert!(dir.join("out/state_1337.json").exists());

    // craft a chain-specific tuple for the registered local delegate
    let out = run(
        &[
            "craft-tuple",
            "--chain-id",
            "1337",
            "--target",
            "0x5fbdb2315678afecb367f032d93f642f64180aa3",
            "--nonce",
            "0",
            "--key",
            "victim",
            "--out",
            "out/install.hex",
        ],
        &dir,
    );
    assert!(out.status.success());
    let crafted = stdout_json(&out);
    assert_eq!(
        crafted["authority"], "0xf39fd6e51aad88f6f4ce6ab8827279cfffb92266",
        "crafted tuple must recover the victim"
    );

    let out = run(
        &["authtx", "--output", "out", "--tuple", "out/install.hex"],
        &dir,
    );
    assert!(out.status.success());
    let receipt = stdout_json(&out);
    assert_eq!(receipt["tuples_applied"][0]["accepted"], true);

    // the same tuple again: protocol rejection (nonce), still exit 0
    let out = run(
        &["authtx", "--output", "out", "--tuple", "out/install.hex"],
        &dir,
    );
    assert!(out.status.success());
    let receipt = stdout_json(&out);
    assert_eq!(receipt["tuples_applied"][0]["accepted"], false);
    assert_eq!(
        receipt["tuples_applied"][0]["reject_reason"],
        "nonce_mismatch"
    );

    let out = run(&["scan", "--output", "out"], &dir);
    assert!(out.status.success());
    let scan = stdout_json(&out);
    assert_eq!(scan["delegations"][0]["behavior"], "malicious_drainer");
    assert_eq!(scan["delegations"][0]["warning"], true);
}

#[test]
fn scan_on_fresh_state_reports_nothing() {
    let dir = tmp_dir("scan-fresh");
    run(&["init", "--output", "out"], &dir);
    let out = run(&["scan", "--output", "out"], &dir);
    assert!(out.status.success());
    assert_eq!(
        stdout_json(&out)["delegations"].as_array().unwrap().len(),
        0
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("no delegations"));
}

#[test]
fn run_pipeline_writes_reports_and_exits_zero() {
    let dir = tmp_dir("pipeline");
    let out = run(&["run", "pipeline", "--output", "run"], &dir);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["a", "b", "c", "pipeline"] {
        assert!(
            dir.join(format!("run/reports/{name}.json")).exists(),
            "missing {name}.json"
        );
    }
    assert!(dir.join("run/state/before.json").exists());
    assert!(dir.join("run/state/after.json").exists());
    let report = stdout_json(&out);
    assert_eq!(report["scenario_id"], "pipeline");
    assert_eq!(report["tokens_after"], "0");
    assert_eq!(report["eth_after"], "0");
}

#[test]
fn run_crosschain_writes_aggregate() {
    let dir = tmp_dir("crosschain");
    let out = run(&["run", "crosschain", "--output", "run"], &dir);
    assert!(out.status.success());
    let aggregate = stdout_json(&out);
    assert_eq!(aggregate["delegation_writes"], 3);
    assert_eq!(aggregate["total_tokens_drained"], "6000000000000000000000");
    assert!(dir.join("run/reports/aggregate.json").exists());
    assert!(dir.join("run/reports/chain_2337/crosschain.json").exists());
}

#[test]
fn run_composite_blocked_under_all_filters_is_success() {
    let dir = tmp_dir("composite-blocked");
    let out = run(
        &[
            "run",
            "composite",
            "--policy",
            "all-filters",
            "--output",
            "run",
        ],
        &dir,
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("blocked"));

    let out = run(&["run", "composite", "--output", "run2"], &dir);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["trigger_origin"], "4337-pipeline");
    assert_eq!(report["eth_after"], "0");
}

#[test]
fn exit_code_contract() {
    let dir = tmp_dir("exit-codes");

    // 2: usage errors
    let out = run(
        &[
            "craft-tuple",
            "--chain-id",
            "0",
            "--target",
            "zzz",
            "--nonce",
            "0",
            "--key",
            "victim",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["run", "warp"], &dir);
    assert_eq!(out.status.code(), Some(2));

    // 3: policy rejection of a chain-agnostic tuple
    run(&["init", "--output", "out"], &dir);
    run(
        &[
            "craft-tuple",
            "--chain-id",
            "0",
            "--target",
            "0x5fbdb2315678afecb367f032d93f642f64180aa3",
            "--nonce",
            "0",
            "--key",
            "victim",
            "--out",
            "out/chain0.hex",
        ],
        &dir,
    );
    let out = run(
        &[
            "authtx",
            "--output",
            "out",
            "--policy",
            "strict",
            "--tuple",
            "out/chain0.hex",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(3));
    let receipt = stdout_json(&out);
    assert_eq!(
        receipt["tuples_applied"][0]["reject_reason"],
        "chain_agnostic_forbidden"
    );
}

#[test]
fn identical_config_produces_byte_identical_reports() {
    let dir = tmp_dir("determinism");
    run(&["run", "pipeline", "--seed", "7", "--output", "one"], &dir);
    run(&["run", "pipeline", "--seed", "7", "--output", "two"], &dir);
    for name in ["a", "b", "c", "pipeline"] {
        let one = std::fs::read(dir.join(format!("one/reports/{name}.json"))).unwrap();
        let two = std::fs::read(dir.join(format!("two/reports/{name}.json"))).unwrap();
        assert_eq!(
            one, two,
            "report {name}.json differs between identical runs"
        );
    }
    let one = std::fs::read(dir.join("one/state/after.json")).unwrap();
    let two = std::fs::read(dir.join("two/state/after.json")).unwrap();
    assert_eq!(one, two);

    run(&["run", "crosschain", "--output", "xc-one"], &dir);
    run(&["run", "crosschain", "--output", "xc-two"], &dir);
    let one = std::fs::read(dir.join("xc-one/reports/aggregate.json")).unwrap();
    let two = std::fs::read(dir.join("xc-two/reports/aggregate.json")).unwrap();
    assert_eq!(one, two);
}

#[test]
fn config_file_drives_chain_and_policy() {
    let dir = tmp_dir("config");
    let config = serde_json::json!({
        "chains": [{ "chain_id": 2337, "funding_wei": "5000000000000000000000" }],
        "policy": { "forbid_chain_agnostic": true },
        "output_dir": "cfg-out",
    });
    std::fs::write(
        dir.join("run.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();

    let out = run(&["init", "--config", "run.json"], &dir);
    assert!(out.status.success());
    assert!(dir.join("cfg-out/state_2337.json").exists());
    let state: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("cfg-out/state_2337.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(state["chain_id"], 2337);
}

#[test]
fn crosschain_follows_configured_chain_list() {
    let dir = tmp_dir("crosschain-config");
    let config = serde_json::json!({
        "chains": [
            { "chain_id": 4444, "funding_wei": "10000000000000000000000" },
            { "chain_id": 5555, "funding_wei": "10000000000000000000000" },
        ],
    });
    std::fs::write(dir.join("two.json"), config.to_string()).unwrap();
    let out = run(
        &[
            "run",
            "crosschain",
            "--config",
            "two.json",
            "--output",
            "run",
        ],
        &dir,
    );
    assert!(out.status.success());
    let aggregate = stdout_json(&out);
    assert_eq!(aggregate["delegation_writes"], 2);
    assert_eq!(aggregate["rows"].as_array().unwrap().len(), 2);
    assert!(dir.join("run/reports/chain_4444/crosschain.json").exists());
    assert!(dir.join("run/reports/chain_5555/crosschain.json").exists());
}
