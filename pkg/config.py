import json
import math
from pathlib import Path

from jsonschema import Draft7Validator

from errors import ConfigInvalid, DataHandlingError
from routing.route_table import RouteTable

BUNDLED_DIR = Path(__file__).parent / "scenario" / "bundled"

SCHEMA_VERSION = 1

_DEFAULT_STATION = {
    "domain": None,
    "consumer_slots": 8,
    "delivery_mode": "copy_to_cache",
    "max_concurrent_stages": 4,
    "cache_in_transit": False,
    "stream_server": None,
    "nfs_server_bandwidth": None,
}
_DEFAULT_CACHE = {"mode": "distributed", "node_count": 1}
_DEFAULT_ARCHIVE = {
    "domain": None,
    "drives": 2,
    "mount_latency": 60.0,
    "drive_rate": 30e6,
    "tape_capacity": 10**9,
}
_DEFAULT_FAULTS = {"probability": 0.0, "attempt_probabilities": [], "retry_budget": 2}
_DEFAULT_WORKLOAD = {
    "reuse_skew": 0.0,
    "arrival_rate": 1.0,
    "consumers_per_project": 1,
    "think_time": 0.0,
    "files_per_project": 1,
    "diurnal_amplitude": 0.0,
    "user": None,
    "start_day": 0.0,
}

_ID = {"type": "string", "pattern": "^[A-Za-z0-9][A-Za-z0-9._-]*$"}
_BYTES = {"type": "number", "exclusiveMinimum": 0}
_RATE = {"type": "number", "exclusiveMinimum": 0}
_SECONDS = {"type": "number", "minimum": 0}
_PROBABILITY = {"type": "number", "minimum": 0, "maximum": 1}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "seed", "duration_days", "stations", "links"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "duration_days": {"type": "number", "exclusiveMinimum": 0},
        "faults": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probability": _PROBABILITY,
                "attempt_probabilities": {"type": "array", "items": _PROBABILITY},
                "retry_budget": {"type": "integer", "minimum": 0},
            },
        },
        "stations": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "cache"],
                "properties": {
                    "id": _ID,
                    "domain": {"type": ["string", "null"]},
                    "cache": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["quota", "groups"],
                        "properties": {
                            "quota": _BYTES,
                            "groups": {
                                "type": "object",
                                "minProperties": 1,
                                "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
                            },
                            "mode": {"enum": ["distributed", "nfs_shared"]},
                            "node_count": {"type": "integer", "minimum": 1},
                        },
                    },
                    "consumer_slots": {"type": "integer", "minimum": 1},
                    "delivery_mode": {"enum": ["copy_to_cache", "network_attached"]},
                    "max_concurrent_stages": {"type": "integer", "minimum": 1},
                    "cache_in_transit": {"type": "boolean"},
                    "stream_server": {"type": ["string", "null"]},
                    "nfs_server_bandwidth": {"anyOf": [_RATE, {"type": "null"}]},
                },
            },
        },
        "archives": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id"],
                "properties": {
                    "id": _ID,
                    "domain": {"type": ["string", "null"]},
                    "drives": {"type": "integer", "minimum": 1},
                    "mount_latency": _SECONDS,
                    "drive_rate": _RATE,
                    "tape_capacity": _BYTES,
                },
            },
        },
        "links": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["a", "b", "bandwidth"],
                "properties": {
                    "a": {"type": "string"},
                    "b": {"type": "string"},
                    "bandwidth": _RATE,
                    "latency": _SECONDS,
                },
            },
        },
        "routes": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["station", "domain", "next_hop"],
                "properties": {
                    "station": {"type": "string"},
                    "domain": {"type": "string"},
                    "next_hop": {"type": "string"},
                },
            },
        },
        "users": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "group"],
                "properties": {"name": {"type": "string", "minLength": 1}, "group": {"type": "string"}},
            },
        },
        "datasets": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "prefix", "count", "file_size", "tier"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "prefix": {"type": "string", "pattern": "^[^;|=,]+$"},
                    "count": {"type": "integer", "minimum": 0},
                    "file_size": _BYTES,
                    "tier": {"enum": ["raw", "reconstructed", "secondary", "montecarlo"]},
                    "archive": {"type": ["string", "null"]},
                    "cached_at": {"type": "array", "items": {"type": "string"}},
                    "parent_dataset": {"type": ["string", "null"]},
                },
            },
        },
        "workloads": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "kind"],
                "properties": {
                    "name": {"type": "string", "pattern": "^[^;|=,]+$"},
                    "kind": {"enum": ["analysis", "reconstruction", "mc_import"]},
                    "station": {"type": "string"},
                    "group": {"type": "string"},
                    "dataset": {"type": "string"},
                    "reuse_skew": {"type": "number", "minimum": 0},
                    "arrival_rate": _RATE,
                    "consumers_per_project": {"type": "integer", "minimum": 1},
                    "think_time": _SECONDS,
                    "files_per_project": {"type": "integer", "minimum": 1},
                    "diurnal_amplitude": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    "user": {"type": ["string", "null"]},
                    "start_day": {"type": "number", "minimum": 0},
                    "duration_days": {"type": "number", "minimum": 0},
                    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                    "sources": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "archive": {"type": "string"},
                    "file_size": _BYTES,
                    "files_per_day": _RATE,
                },
            },
        },
    },
}


def resolve_config_path(name_or_path: str | Path) -> Path:
    """A path as given, or the bundled scenario of that name."""
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = BUNDLED_DIR / f"{name_or_path}.json"
    if bundled.exists():
        return bundled
    return path


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.json"))


def load_config(path: str | Path) -> dict:
    """Read a scenario document. Raises OSError when it cannot be read."""
    with open(resolve_config_path(path)) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigInvalid([("", f"not valid JSON: {e}")]) from e
    return doc


def validate_config(doc: dict) -> dict:
    """Return a copy of the document with defaults filled in.

    Raises ConfigInvalid listing every problem as (field path, message);
    structure is checked first, cross-references only once it is sound.
    """
    problems = [
        (_format_path(error.absolute_path), error.message)
        for error in sorted(Draft7Validator(SCHEMA).iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    ]
    if problems:
        raise ConfigInvalid(problems)
    config = _with_defaults(doc)
    problems = _cross_check(config)
    if problems:
        raise ConfigInvalid(problems)
    return config


def save_config(config: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")


def apply_overrides(config: dict, seed: int | None = None, until_days: float | None = None) -> dict:
    config = dict(config)
    if seed is not None:
        config["seed"] = seed
    if until_days is not None:
        if until_days <= 0:
            raise ConfigInvalid([("duration_days", f"--until must be > 0, got {until_days}")])
        config["duration_days"] = until_days
    return config


# ---------------------------------------------------------------------------
# internal helpers
# ---------------------------------------------------------------------------


def _format_path(parts) -> str:
    out = ""
    for part in parts:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
    return out


def _with_defaults(doc: dict) -> dict:
    config = json.loads(json.dumps(doc))
    config.setdefault("name", "scenario")
    config["faults"] = {**_DEFAULT_FAULTS, **config.get("faults", {})}
    for key in ("archives", "routes", "users", "datasets", "workloads"):
        config.setdefault(key, [])
    config["stations"] = [
        {**_DEFAULT_STATION, **s, "cache": {**_DEFAULT_CACHE, **s["cache"]}} for s in config["stations"]
    ]
    config["archives"] = [{**_DEFAULT_ARCHIVE, **a} for a in config["archives"]]
    config["links"] = [{"latency": 0.0, **link} for link in config["links"]]
    config["datasets"] = [{"archive": None, "cached_at": [], "parent_dataset": None, **d} for d in config["datasets"]]
    config["workloads"] = [{**_DEFAULT_WORKLOAD, **w} for w in config["workloads"]]
    return config


def _cross_check(config: dict) -> list[tuple[str, str]]:
    problems: list[tuple[str, str]] = []
    stations = {s["id"]: s for s in config["stations"]}
    archives = {a["id"]: a for a in config["archives"]}
    nodes: dict[str, str] = {}

    for i, station in enumerate(config["stations"]):
        _register_id(station["id"], f"stations[{i}].id", nodes, problems)
        shares = station["cache"]["groups"]
        if abs(sum(shares.values()) - 1.0) > 1e-9:
            problems.append((f"stations[{i}].cache.groups", f"shares sum to {sum(shares.values())}, expected 1"))
        server = station["stream_server"]
        if server is not None and (server not in stations or server == station["id"]):
            problems.append((f"stations[{i}].stream_server", f"{server!r} is not another station"))
        if station["cache"]["mode"] == "nfs_shared" and station["nfs_server_bandwidth"] is None:
            problems.append((f"stations[{i}].nfs_server_bandwidth", "required for an nfs_shared cache"))
    for i, archive in enumerate(config["archives"]):
        _register_id(archive["id"], f"archives[{i}].id", nodes, problems)

    routes = RouteTable()
    for node_id in nodes:
        entry = stations.get(node_id) or archives[node_id]
        routes.register(node_id, entry["domain"], bool(entry.get("cache_in_transit", False)))

    linked: set[tuple[str, str]] = set()
    for i, link in enumerate(config["links"]):
        for end in ("a", "b"):
            if link[end] not in nodes:
                problems.append((f"links[{i}].{end}", f"unknown node {link[end]!r}"))
        if link["a"] == link["b"]:
            problems.append((f"links[{i}]", "a link needs two different ends"))
        linked.add(tuple(sorted((link["a"], link["b"]))))

    for i, route in enumerate(config["routes"]):
        bad = False
        for key in ("station", "next_hop"):
            if route[key] not in nodes:
                problems.append((f"routes[{i}].{key}", f"unknown station {route[key]!r}"))
                bad = True
        if bad:
            continue
        try:
            routes.add_route(route["station"], route["domain"], route["next_hop"])
        except DataHandlingError as e:
            problems.append((f"routes[{i}]", str(e)))

    for i, user in enumerate(config["users"]):
        if sum(1 for u in config["users"] if u["name"] == user["name"]) > 1:
            problems.append((f"users[{i}].name", f"duplicate user {user['name']!r}"))
    users = {u["name"]: u["group"] for u in config["users"]}

    datasets: dict[str, dict] = {}
    for i, ds in enumerate(config["datasets"]):
        where = f"datasets[{i}]"
        if ds["name"] in datasets:
            problems.append((f"{where}.name", f"duplicate dataset {ds['name']!r}"))
        archive = ds["archive"]
        if archive is not None:
            if archive not in archives:
                problems.append((f"{where}.archive", f"unknown archive {archive!r}"))
            elif ds["file_size"] > archives[archive]["tape_capacity"]:
                problems.append((f"{where}.file_size", f"larger than a tape at {archive}"))
        for j, site in enumerate(ds["cached_at"]):
            if site not in stations:
                problems.append((f"{where}.cached_at[{j}]", f"unknown station {site!r}"))
        parent = ds["parent_dataset"]
        if parent is not None:
            if parent not in datasets:
                problems.append((f"{where}.parent_dataset", f"{parent!r} must be defined earlier"))
            elif datasets[parent]["count"] < ds["count"]:
                problems.append((f"{where}.parent_dataset", f"{parent!r} has fewer files than {ds['name']!r}"))
        datasets[ds["name"]] = ds

    def reachable(src: str, dst: str) -> bool:
        path = routes.compute_path(src, dst) if routes.hop_count(src, dst) is not None else None
        return path is not None and all(tuple(sorted(hop)) in linked for hop in zip(path, path[1:]))

    names: set[str] = set()
    for i, w in enumerate(config["workloads"]):
        where = f"workloads[{i}]"
        if w["name"] in names:
            problems.append((f"{where}.name", f"duplicate workload {w['name']!r}"))
        names.add(w["name"])
        if w["kind"] == "mc_import":
            for key in ("sources", "archive", "file_size", "files_per_day"):
                if key not in w:
                    problems.append((f"{where}.{key}", "required for mc_import"))
            if any(key not in w for key in ("sources", "archive")):
                continue
            if w["archive"] not in archives:
                problems.append((f"{where}.archive", f"unknown archive {w['archive']!r}"))
                continue
            for j, source in enumerate(w["sources"]):
                if source not in stations:
                    problems.append((f"{where}.sources[{j}]", f"unknown station {source!r}"))
                elif not reachable(source, w["archive"]):
                    problems.append((f"{where}.sources[{j}]", f"no linked route from {source} to {w['archive']}"))
            continue

        missing = [key for key in ("station", "group", "dataset") if key not in w]
        for key in missing:
            problems.append((f"{where}.{key}", f"required for {w['kind']}"))
        if missing:
            continue
        station = stations.get(w["station"])
        if station is None:
            problems.append((f"{where}.station", f"unknown station {w['station']!r}"))
            continue
        if w["group"] not in station["cache"]["groups"]:
            problems.append((f"{where}.group", f"group {w['group']!r} has no share at {w['station']}"))
        if w["consumers_per_project"] > station["consumer_slots"]:
            problems.append((f"{where}.consumers_per_project", f"exceeds {station['consumer_slots']} consumer slots"))
        if w["user"] is not None and users.get(w["user"]) != w["group"]:
            problems.append((f"{where}.user", f"{w['user']!r} is not registered in group {w['group']!r}"))
        ds = datasets.get(w["dataset"])
        if ds is None:
            problems.append((f"{where}.dataset", f"unknown dataset {w['dataset']!r}"))
            continue
        sources = list(ds["cached_at"]) + ([ds["archive"]] if ds["archive"] else [])
        if station["delivery_mode"] == "network_attached" and station["stream_server"]:
            target = station["stream_server"]
        else:
            target = w["station"]
        if sources and not any(s == target or reachable(s, target) for s in sources):
            problems.append((f"{where}.station", f"no linked route from {sources} to {target}"))
        if station["cache"]["quota"] < ds["file_size"] * min(w["consumers_per_project"], max(ds["count"], 1)):
            problems.append((f"{where}.consumers_per_project", "cache too small to hold one file per consumer"))

    if not math.isfinite(config["duration_days"]):
        problems.append(("duration_days", "must be finite"))
    return problems


def _register_id(node_id: str, where: str, nodes: dict[str, str], problems: list[tuple[str, str]]) -> None:
    if node_id in nodes:
        problems.append((where, f"id {node_id!r} already used at {nodes[node_id]}"))
    else:
        nodes[node_id] = where
