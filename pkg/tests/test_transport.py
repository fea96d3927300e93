import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from collabls import transport as tp
from collabls.agent import LocalSummary
from collabls.model_core import ViewMask


def _summary(k, rng):
    a = rng.standard_normal((k, k))
    return LocalSummary(rng.standard_normal(k), a @ a.T + np.eye(k), 0.5, ViewMask(tuple(range(k)), k + 1))


def test_summary_frame_layout(rng):
    msg = tp.summary_message(3, _summary(2, rng))
    assert msg.real_count == 7
    frame = tp.encode_message(msg)
    assert len(frame) == 13 + 56
    assert frame[0] == 1
    assert int.from_bytes(frame[1:5], "little") == 3
    assert int.from_bytes(frame[5:13], "little") == 7


def test_empty_raw_data_frame():
    msg = tp.raw_data_message(0, np.zeros((0, 3)), np.zeros(0))
    assert msg.real_count == 0
    frame = tp.encode_message(msg)
    assert len(frame) == tp.HEADER_SIZE
    assert tp.decode_message(frame) == msg


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(list(tp.MessageKind)),
    st.integers(0, 2**32 - 1),
    arrays(np.float64, st.integers(0, 40), elements=st.floats(allow_nan=True, allow_infinity=True)),
    st.booleans(),
)
def test_round_trip_bitwise(kind, agent, payload, packed):
    msg = tp.Message(kind, agent, payload, packed)
    back = tp.decode_message(tp.encode_message(msg))
    assert back == msg
    assert back.payload.tobytes() == msg.payload.tobytes()


def test_decode_rejects_bad_frames():
    frame = tp.encode_message(tp.vector_message(1, [1.0, 2.0]))
    with pytest.raises(ValueError):
        tp.decode_message(frame[:-3])
    with pytest.raises(ValueError):
        tp.decode_message(frame[:5])


@pytest.mark.parametrize("packed", [False, True])
def test_summary_and_covariance_unpack(rng, packed):
    s = _summary(3, rng)
    theta, cov, risk = tp.unpack_summary(tp.summary_message(0, s, packed))
    np.testing.assert_array_equal(theta, s.theta_hat)
    np.testing.assert_allclose(cov, s.sigma_hat_plus, rtol=0, atol=1e-15)
    assert risk == 0.5
    msg = tp.covariance_message(0, s.sigma_hat_plus, packed)
    assert msg.real_count == (6 if packed else 9)
    np.testing.assert_allclose(tp.unpack_covariance(msg), s.sigma_hat_plus, atol=1e-15)


def test_raw_data_round_trip(rng):
    x, y = rng.standard_normal((5, 2)), rng.standard_normal(5)
    msg = tp.raw_data_message(2, x, y)
    assert msg.real_count == 15
    x2, y2 = tp.unpack_raw_data(msg, 2)
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(y2, y)


def test_ledger_counts_and_conservation(rng):
    t = tp.Transport(3, method="demo")
    for i in range(3):
        t.send_up(tp.summary_message(i, _summary(i + 1, rng)))
    ups = t.gather_up()
    assert [m.agent_id for m in ups] == [0, 1, 2]
    for i in range(3):
        t.send_down(tp.vector_message(i, np.zeros(i + 1)))
        t.recv_down(i)
    led = t.ledger
    assert [led.reals_sent(i) for i in range(3)] == [3, 7, 13]
    assert [led.reals_received(i) for i in range(3)] == [1, 2, 3]
    assert led.server_received == sum(led.sent.values())
    assert led.server_sent == sum(led.received.values())


def test_gather_up_orders_concurrent_senders():
    t = tp.Transport(8)
    threads = [threading.Thread(target=t.send_up, args=(tp.vector_message(i, [float(i)]),)) for i in range(8)]
    for th in reversed(threads):
        th.start()
    for th in threads:
        th.join()
    assert [m.agent_id for m in t.gather_up()] == list(range(8))
    assert t.ledger.server_received == 8


def test_dump_frames(tmp_path):
    t = tp.Transport(2, dump_dir=str(tmp_path))
    msg = tp.vector_message(1, [1.0, 2.0, 3.0])
    t.send_up(msg)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["000000_up_1.bin"]
    assert tp.decode_message((tmp_path / files[0]).read_bytes()) == msg


def test_ledger_rejects_bad_direction():
    with pytest.raises(ValueError):
        tp.CommLedger().record(0, "sideways", tp.vector_message(0, [1.0]))
