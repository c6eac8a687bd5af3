import numpy as np
import pytest

from threatlog.ingest import LogRecord
from threatlog.vocab import CLASS_VOCABULARY, NORMAL, binary_label_of

FEATURES = (
    "dns.qry.name.len",
    "mqtt.protoname",
    "mqtt.msg",
    "mqtt.topic",
    "mqtt.conack.flags",
    "tcp.options",
    "tcp.dstport",
)


def make_record(label_class: str = NORMAL, **feature_overrides) -> LogRecord:
    features = {
        "dns.qry.name.len": "12",
        "mqtt.protoname": "MQTT",
        "mqtt.msg": "m0",
        "mqtt.topic": "site/dev0",
        "mqtt.conack.flags": "0x00000000",
        "tcp.options": "opt0",
        "tcp.dstport": "1883",
    }
    features.update({k: str(v) for k, v in feature_overrides.items()})
    return LogRecord(features, binary_label_of(label_class), label_class)


def make_class_records(counts: dict[str, int], seed: int = 0) -> list[LogRecord]:
    """Distinct records per class in a deterministic shuffled order."""
    rng = np.random.default_rng(seed)
    records = []
    for name, count in counts.items():
        for i in range(count):
            records.append(
                make_record(
                    name,
                    **{
                        "dns.qry.name.len": str(10 + i),
                        "tcp.dstport": str(1000 + CLASS_VOCABULARY.index(name)),
                    },
                )
            )
    order = rng.permutation(len(records))
    return [records[i] for i in order]


@pytest.fixture
def seven_feature_record():
    return make_record("DDoS_UDP")
