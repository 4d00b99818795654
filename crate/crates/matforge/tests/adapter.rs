use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use matforge::adapter::{
    AdapterClient, HttpTransport, LpipsMetric, StdioTransport, Transport, WireResponse,
};
use matforge_core::{
    render_sphere, tonemap, EmbeddingProvider, ImageMetric, MaterialFull, ProviderError,
    RenderConfig,
};

fn fixture() -> String {
    concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/fake_adapter.py"
    )
    .to_string()
}

fn stdio_command(extra: &[&str]) -> Vec<String> {
    let mut c = vec!["python3".to_string(), fixture()];
    c.extend(extra.iter().map(|s| s.to_string()));
    c
}

fn stdio_client(extra: &[&str]) -> AdapterClient {
    AdapterClient::connect(Box::new(
        StdioTransport::spawn(&stdio_command(extra)).unwrap(),
    ))
    .unwrap()
}

struct HttpAdapter {
    child: Child,
    url: String,
}

impl Drop for HttpAdapter {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn http_adapter() -> HttpAdapter {
    let mut child = Command::new("python3")
        .args([fixture().as_str(), "--http", "--dim", "24"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let port: u16 = line.trim().parse().unwrap();
    HttpAdapter {
        child,
        url: format!("http://127.0.0.1:{port}/"),
    }
}

fn image(roughness: f64) -> matforge_core::Srgb8Image {
    let mut m = MaterialFull::default();
    m.params.roughness = roughness;
    let cfg = RenderConfig::with_size(16, 16);
    tonemap(&render_sphere(&m, &cfg).unwrap(), 1.0)
}

#[test]
fn stdio_info_reports_the_dimension() {
    let c = stdio_client(&["--dim", "48"]);
    assert_eq!(c.dim(), 48);
    assert!(c.name().starts_with("adapter-48-stdio:"));
}

#[test]
fn stdio_embeddings_are_deterministic_unit_vectors() {
    let c = stdio_client(&[]);
    let a = c.embed_text("shiny gold").unwrap();
    assert_eq!(a, c.embed_text("shiny gold").unwrap());
    assert_ne!(a, c.embed_text("dull gold").unwrap());
    assert_eq!(a.dim(), 32);
    assert!((a.norm() - 1.0).abs() < 1e-5);
    let i = c.embed_image(&image(0.3)).unwrap();
    assert_eq!(i, c.embed_image(&image(0.3)).unwrap());
    assert!((i.norm() - 1.0).abs() < 1e-5);
}

#[test]
fn adapter_errors_are_reported_and_the_session_continues() {
    let c = stdio_client(&[]);
    match c.call("embed_image", "not base64 at all!".into()) {
        Err(ProviderError::Failed(msg)) => assert!(!msg.is_empty()),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        c.call("teleport", String::new()),
        Err(ProviderError::Failed(_))
    ));
    assert!(matches!(c.embed_text("  "), Err(ProviderError::Failed(_))));
    assert_eq!(c.embed_text("rough stone").unwrap().dim(), 32);
}

#[test]
fn non_unit_embeddings_are_rejected() {
    let c = stdio_client(&["--bad-norm"]);
    match c.embed_text("gold") {
        Err(ProviderError::Failed(msg)) => assert!(msg.contains("norm"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn injected_failures_surface_as_failed() {
    // request 1 is `info`; every third request fails
    let c = stdio_client(&["--fail-every", "3"]);
    assert!(c.embed_text("a").is_ok());
    assert!(matches!(c.embed_text("b"), Err(ProviderError::Failed(_))));
    assert!(c.embed_text("c").is_ok());
}

#[test]
fn a_crashed_process_is_restarted() {
    let t = StdioTransport::spawn(&stdio_command(&[])).unwrap();
    assert!(matches!(
        t.exchange("crash"),
        Err(ProviderError::Unavailable(_))
    ));
    let raw = t.exchange(r#"{"id":7,"op":"info","payload":""}"#).unwrap();
    let resp: WireResponse = serde_json::from_str(raw.trim()).unwrap();
    assert_eq!((resp.id, resp.ok, resp.dim), (7, true, Some(32)));
}

#[test]
fn missing_program_is_unavailable() {
    let r = StdioTransport::spawn(&["/nonexistent/adapter".to_string()]);
    assert!(matches!(r, Err(ProviderError::Unavailable(_))));
}

#[test]
fn lpips_through_the_adapter() {
    let c = stdio_client(&[]);
    let a = image(0.2);
    assert_eq!(c.lpips(&a, &a).unwrap(), 0.0);
    let d = c.lpips(&a, &image(0.9)).unwrap();
    assert!(d > 0.0 && d <= 1.0, "{d}");
    let cfg = RenderConfig::with_size(16, 16);
    let metric = LpipsMetric {
        client: &c,
        exposure: 1.0,
    };
    let m = MaterialFull::default();
    let r = render_sphere(&m, &cfg).unwrap();
    assert_eq!(metric.distance(&r, &r).unwrap(), 0.0);
}

#[test]
fn http_transport_round_trip() {
    let server = http_adapter();
    let c = AdapterClient::connect(Box::new(HttpTransport::new(
        server.url.clone(),
        Duration::from_secs(10),
    )))
    .unwrap();
    assert_eq!(c.dim(), 24);
    let a = c.embed_text("polished marble").unwrap();
    assert_eq!(a, c.embed_text("polished marble").unwrap());
    assert!((a.norm() - 1.0).abs() < 1e-5);
    assert!(c.embed_image(&image(0.5)).is_ok());
    assert!(matches!(c.embed_text(""), Err(ProviderError::Failed(_))));
}

#[test]
fn http_status_classes_map_to_error_kinds() {
    let server = http_adapter();
    let t = HttpTransport::new(server.url.clone(), Duration::from_secs(10));
    assert!(matches!(
        t.exchange("overload"),
        Err(ProviderError::Unavailable(_))
    ));
    let down = HttpTransport::new("http://127.0.0.1:1/", Duration::from_secs(2));
    assert!(matches!(
        down.exchange("{}"),
        Err(ProviderError::Unavailable(_))
    ));
}
