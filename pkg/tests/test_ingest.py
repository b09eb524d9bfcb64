import io
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keydyn.errors import DuplicateUser, EmptyDataset, InvalidEnum, MalformedRow
from keydyn.ingest import (
    Device,
    Gender,
    KeyEvent,
    Major,
    Mode,
    SoftLabels,
    Style,
    build_dataset,
    dataset_summary,
    format_events,
    format_labels,
    load_dataset,
    pair_press_release,
    parse_events,
    parse_raw_events,
    parse_labels,
    resolve_data_dir,
)

EV_HEADER = "user_id,device,mode,key,press_ms,release_ms\n"
LAB_HEADER = "user_id,gender,major,style,age,height\n"


def test_parse_event_row():
    events = parse_events((EV_HEADER + "u1,desktop,free,a,100,180\n").encode())
    assert events == [KeyEvent("u1", Device.Desktop, Mode.Free, "a", 100, 180)]


def test_wrong_column_count_reports_line():
    with pytest.raises(MalformedRow) as info:
        parse_events((EV_HEADER + "u1,desktop,free,a,100\n").encode())
    assert info.value.line_no == 2


def test_non_numeric_timestamp():
    with pytest.raises(MalformedRow):
        parse_events((EV_HEADER + "u1,desktop,free,a,1x0,180\n").encode())


def test_unknown_device():
    with pytest.raises(InvalidEnum) as info:
        parse_events((EV_HEADER + "u1,watch,free,a,100,180\n").encode())
    assert info.value.line_no == 2


def test_rows_kept_in_file_order():
    text = EV_HEADER + "u1,desktop,free,b,300,350\nu1,desktop,free,a,100,180\n"
    assert [e.key_label for e in parse_events(text.encode())] == ["b", "a"]


def test_parse_label_row():
    labels = parse_labels((LAB_HEADER + "u1,male,cs,c,24,67\n").encode())
    assert labels == {"u1": SoftLabels(Gender.Male, Major.CS, Style.C_NoLook, 24, 67)}


def test_duplicate_user():
    with pytest.raises(DuplicateUser):
        parse_labels((LAB_HEADER + "u1,male,cs,c,24,67\nu1,female,cs,c,24,67\n").encode())


def test_blank_field_skipped_and_reported(caplog):
    with caplog.at_level(logging.WARNING):
        labels = parse_labels((LAB_HEADER + "u1,male,cs,c,24,67\nu2,male,,c,24,67\n").encode())
    assert set(labels) == {"u1"}
    assert labels.skipped == ["u2"]
    assert sum("u2" in r.getMessage() for r in caplog.records) == 1


def test_label_ranges_enforced():
    with pytest.raises(ValueError):
        SoftLabels(Gender.Male, Major.CS, Style.C_NoLook, 5, 67)
    with pytest.raises(ValueError):
        SoftLabels(Gender.Male, Major.CS, Style.C_NoLook, 20, 95)


def _labels(*users):
    return {u: SoftLabels(Gender.Male, Major.CS, Style.C_NoLook, 24, 67) for u in users}


def test_build_sorts_streams():
    ev = [KeyEvent("u1", Device.Desktop, Mode.Free, k, p, p + 10) for k, p in (("c", 30), ("a", 10), ("b", 20))]
    ds = build_dataset(ev, _labels("u1"))
    assert [e.key_label for e in ds.stream("u1", Device.Desktop, Mode.Free)] == ["a", "b", "c"]


def test_build_drops_negative_hold():
    ev = [KeyEvent("u1", Device.Desktop, Mode.Free, "a", 100, 90),
          KeyEvent("u1", Device.Desktop, Mode.Free, "b", 200, 260)]
    ds = build_dataset(ev, _labels("u1"))
    assert ds.report.events_dropped == 1
    assert ds.report.events_kept + ds.report.events_dropped == ds.report.events_in


def test_build_drops_unlabelled_users():
    ev = [KeyEvent(u, Device.Desktop, Mode.Free, "a", 1, 5) for u in ("u1", "u9")]
    ds = build_dataset(ev, _labels("u1"))
    assert ds.users == ["u1"]
    assert ds.report.users_dropped == ("u9",)
    assert ds.report.users_kept + len(ds.report.users_dropped) == ds.report.users_in


def test_build_empty():
    with pytest.raises(EmptyDataset):
        build_dataset([KeyEvent("u9", Device.Desktop, Mode.Free, "a", 1, 5)], _labels("u1"))


def test_build_idempotent(small_dataset):
    again = build_dataset(small_dataset.events(), small_dataset.labels)
    assert again.streams == small_dataset.streams
    assert again.report.events_dropped == 0


event_rows = st.lists(
    st.tuples(
        st.sampled_from(["u1", "u2", "x_3"]),
        st.sampled_from(list(Device)),
        st.sampled_from(list(Mode)),
        st.sampled_from(["a", "Shift", "Space", "z", "Period"]),
        st.integers(0, 10**9),
        st.integers(0, 5000),
    ),
    max_size=30,
)


@given(event_rows)
@settings(max_examples=100, deadline=None)
def test_events_round_trip(rows):
    events = [KeyEvent(u, d, m, k, p, p + h) for u, d, m, k, p, h in rows]
    text = format_events(events)
    assert parse_events(text.encode()) == events
    assert format_events(parse_events(io.StringIO(text))) == text


def test_labels_round_trip():
    labels = {"u1": SoftLabels(Gender.Female, Major.NonCS, Style.A_MustLook, 30, 60),
              "u2": SoftLabels(Gender.Male, Major.CS, Style.B_OccasionalLook, 19, 74)}
    assert parse_labels(format_labels(labels).encode()) == labels


def test_summary_single_user():
    ds = build_dataset([KeyEvent("u1", Device.Phone, Mode.Fixed, "a", 0, 5)], _labels("u1"))
    s = dataset_summary(ds)
    assert s["n_users"] == 1
    assert s["gender"] == {"male": 1, "female": 0}
    assert s["age"]["std"] == 0
    assert s["keystrokes"]["phone/fixed"] == 1


def test_summary_matches_generator(small_dataset):
    s = dataset_summary(small_dataset)
    labs = small_dataset.labels.values()
    assert s["style"]["a"] == sum(l.typing_style is Style.A_MustLook for l in labs)
    assert s["keystrokes_total"] == len(small_dataset.events())


def test_pair_press_release():
    D, F = Device.Desktop, Mode.Free
    rows = [("u1", D, F, "a", "press", 0), ("u1", D, F, "b", "press", 10),
            ("u1", D, F, "a", "release", 50), ("u1", D, F, "c", "press", 60),
            ("u1", D, F, "b", "release", 70)]
    events, unpaired = pair_press_release(rows)
    assert [(e.key_label, e.press_time, e.release_time) for e in events] == [("a", 0, 50), ("b", 10, 70)]
    assert unpaired == 1


def test_parse_raw_events():
    text = ("user_id,device,mode,key,direction,time_ms\n"
            "u1,desktop,free,a,press,0\nu1,desktop,free,a,release,40\n")
    events, unpaired = parse_raw_events(text.encode())
    assert events == [KeyEvent("u1", Device.Desktop, Mode.Free, "a", 0, 40)]
    assert unpaired == 0


def test_load_dataset_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_data_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("KEYDYN_DATA_DIR", str(tmp_path))
    assert resolve_data_dir(None) == tmp_path
    assert resolve_data_dir("elsewhere").name == "elsewhere"
