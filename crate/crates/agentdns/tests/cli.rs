use std::process::Command;

use agentdns::cli;
use agentdns::config::ServerConfig;
use agentdns::harness::FixtureEnv;
use agentdns_core::resolution::ResolutionResponse;

async fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("agentdns").chain(args.iter().copied());
    let code = cli::run(argv, &mut out, &mut err).await;
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[tokio::test]
async fn agent_commands_against_fixtures() {
    let env = FixtureEnv::start().await.unwrap();
    let url = env.url();
    let key = env.seed.agents[0].access_key.clone().unwrap();
    let (code, token, err) = run(&["--server", &url, "auth", "token", "--agent-id", "agent-a", "--access-key", &key]).await;
    assert_eq!(code, 0, "{err}");
    let token = token.trim().to_string();

    let (code, out, err) = run(&["--server", &url, "--token", &token, "search", "search the web for articles", "-k", "3"]).await;
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4, "{out}");
    assert!(lines[0].starts_with("rank"));
    assert!(lines[1].contains("agentdns://example/search/searchagent"), "{out}");

    let (code, out, _) = run(&[
        "--server", &url, "--token", &token, "--json", "resolve", "agentdns://example/search/searchagent",
    ])
    .await;
    assert_eq!(code, 0);
    let res: ResolutionResponse = serde_json::from_str(&out).unwrap();
    assert_eq!(res.record.proxy_endpoint, format!("{url}/proxy/example/search/searchagent"));
    assert!(!out.contains("canary-"));

    let (code, _, err) = run(&["--server", &url, "--token", &token, "resolve", "agentdns://example/search/nothing"]).await;
    assert_eq!(code, 1);
    assert!(err.contains("NOT_FOUND"), "{err}");

    let (code, out, _) = run(&["--server", &url, "--token", &token, "--json", "billing", "balance"]).await;
    assert_eq!(code, 0);
    assert!(out.contains("1000"), "{out}");
    env.shutdown().await.unwrap();
}

#[tokio::test]
async fn admin_commands_register_and_update() {
    let env = FixtureEnv::start().await.unwrap();
    let url = env.url();
    let admin = ["--server", url.as_str(), "--admin-key", env.admin_key.as_str()];
    let with = |rest: &[&'static str]| -> Vec<String> {
        admin.iter().chain(rest).map(|s| s.to_string()).collect()
    };
    let call = |args: Vec<String>| async move {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&refs).await
    };
    assert_eq!(call(with(&["org", "register", "acme", "Acme"])).await.0, 0);
    assert_eq!(call(with(&["org", "verify", "acme"])).await.0, 0);
    let vendor = env.vendors.iter().next().unwrap().1;
    let mut args = with(&["--json", "service", "register", "--org", "acme", "--category", "tools/text", "--name", "summarizer"]);
    args.extend(
        [
            "--endpoint", &vendor.endpoint(), "--capabilities", "summarize long text", "--price", "2",
            "--credential-header", vendor.credential_header(), "--credential-secret", vendor.secret(),
        ]
        .map(String::from),
    );
    let (code, out, err) = call(args).await;
    assert_eq!(code, 0, "{err}");
    let rec: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(rec["version"], 1);

    let (code, out, _) = call(with(&[
        "--json", "service", "update", "agentdns://acme/tools/text/summarizer", "--expected-version", "1", "--price", "4",
    ]))
    .await;
    assert_eq!(code, 0);
    assert_eq!(serde_json::from_str::<serde_json::Value>(&out).unwrap()["pricing"]["amount"], 4);
    let (code, _, err) = call(with(&[
        "service", "update", "agentdns://acme/tools/text/summarizer", "--expected-version", "1", "--price", "5",
    ]))
    .await;
    assert_eq!(code, 1);
    assert!(err.contains("VERSION_CONFLICT"), "{err}");

    let (code, out, _) = call(with(&["--json", "billing", "deposit", "7", "--agent-id", "agent-a"])).await;
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("1007"), "{out}");
    let (code, _, _) = call(with(&["service", "delete", "agentdns://acme/tools/text/summarizer"])).await;
    assert_eq!(code, 0);

    let (code, _, err) = call(with(&["service", "get", "not a name"])).await;
    assert_eq!(code, 2, "{err}");
    env.shutdown().await.unwrap();
}

#[tokio::test]
async fn secrets_may_start_with_a_dash() {
    for args in [
        &["--token", "-abc", "billing", "balance"][..],
        &["--admin-key", "-abc", "org", "verify", "x"],
    ] {
        let mut full = vec!["--server", "http://127.0.0.1:9"];
        full.extend(args);
        assert_eq!(run(&full).await.0, 1, "{args:?} should parse and then fail to connect");
    }
    let (code, _, _) = run(&["--server", "http://127.0.0.1:9", "auth", "token", "--agent-id", "a", "--access-key", "-k"]).await;
    assert_eq!(code, 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_agentdns");
    let status = |args: &[&str]| {
        Command::new(bin)
            .args(args)
            .env_remove("AGENTDNS_SERVER")
            .env_remove("AGENTDNS_TOKEN")
            .env_remove("AGENTDNS_ADMIN_KEY")
            .output()
            .unwrap()
    };
    assert_eq!(status(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(status(&["search"]).status.code(), Some(2));
    assert_eq!(status(&["--help"]).status.code(), Some(0));
    let down = status(&["--server", "http://127.0.0.1:9", "--token", "x", "search", "hello"]);
    assert_eq!(down.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("agentdns.toml");
    let data = dir.path().join("data");
    let cfg_s = cfg.to_str().unwrap();
    let init = status(&["init", "--config", cfg_s, "--data-dir", data.to_str().unwrap(), "--listen", "127.0.0.1:0"]);
    assert_eq!(init.status.code(), Some(0));
    let loaded = ServerConfig::load(&cfg).unwrap();
    assert_eq!(loaded.data_dir.as_deref(), Some(data.as_path()));
    assert!(loaded.admin_key.len() >= 16);
    // Refuses to clobber without --force.
    assert_eq!(status(&["init", "--config", cfg_s]).status.code(), Some(2));
    assert_eq!(status(&["init", "--config", cfg_s, "--force"]).status.code(), Some(0));
    assert_ne!(ServerConfig::load(&cfg).unwrap().admin_key, loaded.admin_key);
}

#[test]
fn demo_runs_end_to_end() {
    let out = Command::new(env!("CARGO_BIN_EXE_agentdns")).arg("demo").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("agentdns://example/search/searchagent"));
    assert!(stdout.contains("agentdns://stdhub/standards/retrieval/stdretriever"));
    assert!(stdout.contains("completed  total cost 8"), "{stdout}");
}
