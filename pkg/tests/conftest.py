import copy

import pytest

SMALL_SCENARIO = {
    "schema": 1,
    "name": "small",
    "seed": 7,
    "duration_days": 2,
    "stations": [
        {
            "id": "central",
            "domain": "fnal",
            "consumer_slots": 4,
            "cache": {"quota": 200_000, "groups": {"analysis": 0.7, "mc": 0.3}, "node_count": 2},
        },
        {
            "id": "lancaster",
            "domain": "uk",
            "cache": {"quota": 100_000, "groups": {"mc": 1.0}},
        },
    ],
    "archives": [{"id": "enstore", "domain": "fnal"}],
    "links": [
        {"a": "central", "b": "enstore", "bandwidth": 1e6},
        {"a": "lancaster", "b": "central", "bandwidth": 1e5, "latency": 0.05},
    ],
    "routes": [{"station": "lancaster", "domain": "fnal", "next_hop": "central"}],
    "users": [{"name": "alice", "group": "analysis"}],
    "datasets": [
        {
            "name": "thumbs",
            "prefix": "thumb-",
            "count": 20,
            "file_size": 10_000,
            "tier": "secondary",
            "archive": "enstore",
        }
    ],
    "workloads": [
        {
            "name": "physics",
            "kind": "analysis",
            "station": "central",
            "group": "analysis",
            "dataset": "thumbs",
            "reuse_skew": 0.8,
            "arrival_rate": 8,
            "consumers_per_project": 2,
            "think_time": 60,
            "files_per_project": 5,
            "user": "alice",
        },
        {
            "name": "mc",
            "kind": "mc_import",
            "sources": ["lancaster"],
            "archive": "enstore",
            "file_size": 10_000,
            "files_per_day": 5,
        },
    ],
}


@pytest.fixture
def small_scenario():
    return copy.deepcopy(SMALL_SCENARIO)
