import datetime as dt

import pytest

from hsasim.core import PersonYearRecord, Sex
from hsasim.ingest import (
    AGE_WINDOW,
    INCOMPLETE,
    Dataset,
    EmptyCohortError,
    IngestError,
    filter_cohort,
    load_person_years,
    write_person_years,
)

HEADER = "person_id,sex,birth_date,year,expense\n"


def write(tmp_path, body, name="data.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body, encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "p1,F,1970-03-02,2007,10.5\np1,F,1970-03-02,2008,0\np2,M,1980-01-01,2007,1234.56\n")
    data = load_person_years(p)
    assert len(data.records) == 3
    assert data.study_years == (2007, 2008)
    assert data.records[0].expense == 1050
    assert data.records[2].expense == 123456


def test_duplicate_person_year(tmp_path):
    p = write(tmp_path, "p1,F,1970-03-02,2007,1\np1,F,1970-03-02,2007,2\n")
    with pytest.raises(IngestError, match="duplicate person-year"):
        load_person_years(p)


def test_precision_error_names_line(tmp_path):
    p = write(tmp_path, "p1,F,1970-03-02,2007,1\np1,F,1970-03-02,2008,1234.567\n")
    with pytest.raises(IngestError, match=r"line 3: expense precision exceeds cents"):
        load_person_years(p)


@pytest.mark.parametrize(
    "row",
    ["p1,X,1970-03-02,2007,1", "p1,F,1970-13-02,2007,1", "p1,F,1970-03-02,20x7,1", "p1,F,1970-03-02,2007",
     "p1,F,1970-03-02,2007,-5"],
)
def test_malformed_rows_name_line(tmp_path, row):
    p = write(tmp_path, "p0,F,1970-03-02,2007,1\n" + row + "\n")
    with pytest.raises(IngestError, match="line 3"):
        load_person_years(p)


def test_inconsistent_identity(tmp_path):
    p = write(tmp_path, "p1,F,1970-03-02,2007,1\np1,M,1970-03-02,2008,1\n")
    with pytest.raises(IngestError, match="inconsistent sex/birth_date for person p1"):
        load_person_years(p)


def test_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("id,sex\n", encoding="utf-8")
    with pytest.raises(IngestError, match="header"):
        load_person_years(p)


def test_non_consecutive_years():
    r = PersonYearRecord("p", Sex.FEMALE, dt.date(1970, 1, 1), 2007, 0)
    with pytest.raises(IngestError):
        Dataset((r,), (2005, 2007))


def test_write_round_trip(tmp_path):
    recs = [PersonYearRecord("a", Sex.MALE, dt.date(1975, 5, 5), y, 12345 * (y - 2004)) for y in range(2005, 2010)]
    p = tmp_path / "rt.csv"
    write_person_years(recs, p)
    assert load_person_years(p).records == tuple(recs)


def _person(pid, birth, years=range(2005, 2010), sex=Sex.FEMALE):
    return [PersonYearRecord(pid, sex, birth, y, 1000) for y in years]


def test_filter_cohort_reasons():
    recs = (
        _person("kept", dt.date(1975, 1, 1))  # 30 on Jan 2005, 34 on Dec 2009
        + _person("missing2007", dt.date(1975, 1, 1), [2005, 2006, 2008, 2009])
        + _person("young", dt.date(1980, 6, 1))  # 24 on Jan 2005
        + _person("old", dt.date(1943, 6, 1))  # 66 on Dec 2009
    )
    cohort = filter_cohort(Dataset.from_records(recs))
    assert [p.person_id for p in cohort.persons] == ["kept"]
    assert cohort.dropped == {INCOMPLETE: 1, AGE_WINDOW: 2}
    assert len(cohort) + sum(cohort.dropped.values()) == 4


def test_filter_boundary_ages():
    recs = (
        _person("exact25", dt.date(1980, 1, 1))  # turns 25 on Jan 1 2005
        + _person("day_short", dt.date(1980, 1, 2))  # still 24 on Jan 1 2005
        + _person("turns65", dt.date(1944, 12, 31))  # turns 65 on Dec 31 2009
        + _person("turns66", dt.date(1943, 12, 31))
    )
    kept = {p.person_id for p in filter_cohort(Dataset.from_records(recs)).persons}
    assert kept == {"exact25", "turns65"}


def test_empty_cohort():
    recs = _person("young", dt.date(1990, 1, 1))
    with pytest.raises(EmptyCohortError, match="empty cohort"):
        filter_cohort(Dataset.from_records(recs))


def test_filter_idempotent(synth_cohort):
    again = filter_cohort(synth_cohort)
    assert again == synth_cohort


def test_cohort_views(synth_cohort):
    assert synth_cohort.expenses.shape == (len(synth_cohort), 5)
    assert set(synth_cohort.sex_codes.tolist()) == {0, 1}
    assert synth_cohort.levels().max() <= 3
