"""Checks the shipped JSON schemas against real engine output.

Usage: check_schemas.py <schemas dir> <fixtures dir> <aegle binary>

Every schema must itself be valid, every scripted agent reply must satisfy the
schema of the role it answers, and transcripts, events and HTTP bodies produced
by the binary must satisfy the service description.
"""

import json
import pathlib
import subprocess
import sys
import tempfile
import urllib.error
import urllib.request

from jsonschema import Draft202012Validator
from referencing import Registry, Resource
from referencing.jsonschema import DRAFT202012

ABLATIONS = ["full", "without-ss", "without-gi", "without-dt", "without-dr"]

failures = []


def check(ok, message):
    if not ok:
        failures.append(message)


def errors(validator, doc):
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in validator.iter_errors(doc)]


def load_schemas(root):
    docs = {p.name: json.loads(p.read_text()) for p in sorted(root.glob("*.json"))}
    registry = Registry()
    for name, doc in docs.items():
        if name == "http_api_v1.json":
            continue
        Draft202012Validator.check_schema(doc)
        registry = registry.with_resource(name, Resource.from_contents(doc))
    api = docs["http_api_v1.json"]
    # The API document is not itself a schema; its components resolve as 2020-12.
    registry = registry.with_resource("http_api_v1.json", DRAFT202012.create_resource(api))
    for schema in api["components"]["schemas"].values():
        Draft202012Validator.check_schema(schema)

    def validator(name, pointer=""):
        ref = {"$ref": name + ("#" + pointer if pointer else "")}
        return Draft202012Validator(ref, registry=registry)

    return validator


def check_script(validator, script_path):
    activation = validator("orchestrator_activation.v1.json")
    history = validator("specialist_history_taking.v1.json")
    synthesis = validator("specialist_diagnostic_synthesis.v1.json")
    merge = validator("aggregator_write.v1.json", "/$defs/merge")
    rows = json.loads(script_path.read_text())["entries"]
    seen = set()
    for i, row in enumerate(rows):
        role = row["role_tag"]
        seen.add(role)
        if "response" not in row or role in ("judge", "aggregator_speak"):
            continue
        reply = json.loads(row["response"])
        where = f"script row {i} ({role})"
        if role == "orchestrator":
            check(not errors(activation, reply), f"{where}: {errors(activation, reply)}")
        elif role.startswith("specialist"):
            if "diagnostic_synthesis" in row.get("contains", "") or "Proposals already" in row.get("contains", ""):
                check(not errors(synthesis, reply), f"{where}: {errors(synthesis, reply)}")
            else:
                check(not errors(history, reply), f"{where}: {errors(history, reply)}")
        elif role == "aggregator_write":
            # The fixture answers merges with an empty object to exercise the
            # rule-based fallback, so it must be rejected.
            check(bool(errors(merge, reply)), f"{where}: empty merge reply unexpectedly valid")
    check({"orchestrator", "aggregator_write"} <= seen, "script lacks orchestrator or aggregator rows")


def check_runs(validator, fixtures, binary, work):
    transcript = validator("http_api_v1.json", "/components/schemas/Transcript")
    event = validator("session_event.v1.json")
    total = 0
    for variant in ABLATIONS:
        out = work / variant
        subprocess.run([str(binary), "simulate", "--profile", str(fixtures / "profile.json"), "--dataset",
                        str(fixtures / "cases3.jsonl"), "--out", str(out), "--ablate", variant, "--max-turns", "12"],
                       check=True, capture_output=True)
        for line in (out / "transcripts.jsonl").read_text().splitlines():
            doc = json.loads(line)
            where = f"{variant}/{doc.get('case_id')}"
            check(not errors(transcript, doc), f"{where}: {errors(transcript, doc)[:3]}")
            seqs = [e["seq"] for e in doc["events"]]
            check(seqs == list(range(1, len(seqs) + 1)), f"{where}: event seq not contiguous")
            for e in doc["events"]:
                check(not errors(event, e), f"{where} event {e.get('seq')}: {errors(event, e)[:2]}")
            total += 1
    check(total == 3 * len(ABLATIONS), f"expected {3 * len(ABLATIONS)} transcripts, saw {total}")


def request(base, method, path, body=None):
    data = None if body is None else body.encode()
    req = urllib.request.Request(base + path, data=data, method=method, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=20) as r:
            return r.status, r.headers.get("Content-Type", ""), r.read().decode()
    except urllib.error.HTTPError as e:
        return e.code, e.headers.get("Content-Type", ""), e.read().decode()


def check_service(validator, fixtures, binary):
    def component(name):
        return validator("http_api_v1.json", "/components/schemas/" + name)

    event = validator("session_event.v1.json")
    proc = subprocess.Popen([str(binary), "serve", "--profile", str(fixtures / "profile.json"), "--port", "0",
                             "--max-turns", "4"], stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    try:
        banner = proc.stdout.readline().strip()
        port = int(banner.rsplit(":", 1)[1])
        check(port > 0, f"serve printed no usable port: {banner!r}")
        base = f"http://127.0.0.1:{port}"

        status, _, body = request(base, "POST", "/sessions", json.dumps({"department": "cardiology"}))
        check(status == 201, f"create returned {status}")
        created = json.loads(body)
        check(not errors(component("SessionCreated"), created), f"create body: {errors(component('SessionCreated'), created)}")
        sid = created["session_id"]

        for i in range(20):
            status, _, body = request(base, "POST", f"/sessions/{sid}/messages", json.dumps({"text": f"reply {i}"}))
            check(status == 200, f"message returned {status}")
            step = json.loads(body)
            check(not errors(component("StepResult"), step), f"step body: {errors(component('StepResult'), step)}")
            check(("question" in step) != step["closed"], "question must be present exactly while open")
            if step["closed"]:
                break
        check(step["closed"], "session never closed")

        for path, body, expected in [(f"/sessions/{sid}/messages", '{"text": "again"}', 409),
                                     ("/sessions/nope/messages", '{"text": "x"}', 404),
                                     ("/sessions", '{"department": ""}', 400),
                                     ("/sessions", "{oops", 400)]:
            status, _, raw = request(base, "POST", path, body)
            check(status == expected, f"POST {path} returned {status}, expected {expected}")
            check(not errors(component("Problem"), json.loads(raw)), f"POST {path}: error body off schema")

        status, ctype, body = request(base, "GET", f"/sessions/{sid}/events?from=0&wait=0")
        check(status == 200 and "ndjson" in ctype, f"events returned {status} {ctype}")
        lines = [json.loads(line) for line in body.splitlines() if line]
        check(lines and lines[-1]["event"] == "session_closed", "event stream does not end with session_closed")
        for e in lines:
            check(not errors(event, e), f"streamed event {e.get('seq')}: {errors(event, e)[:2]}")
        check(request(base, "GET", f"/sessions/{sid}/events?from=x")[0] == 400, "bad from accepted")

        status, ctype, _ = request(base, "GET", f"/sessions/{sid}/ipn")
        check(status == 200 and ctype.startswith("text/markdown"), f"ipn returned {status} {ctype}")
        status, _, body = request(base, "GET", f"/sessions/{sid}/transcript")
        doc = json.loads(body)
        check(status == 200 and not errors(component("Transcript"), doc), f"transcript: {errors(component('Transcript'), doc)[:3]}")
        check(doc["events"] == lines, "transcript events differ from the stream")
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def main():
    schemas, fixtures, binary = (pathlib.Path(a) for a in sys.argv[1:4])
    validator = load_schemas(schemas)
    check_script(validator, fixtures / "script.json")
    with tempfile.TemporaryDirectory() as work:
        check_runs(validator, fixtures, binary, pathlib.Path(work))
    check_service(validator, fixtures, binary)
    for f in failures[:40]:
        print("FAIL", f)
    print(f"{len(failures)} schema failures")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
