import pytest

from caesuc.cavern import CavernParams, CavernState


def make_params(**overrides):
    base = dict(
        volume=60_000.0,
        wall_area=20_000.0,
        heat_transfer=0.5,
        wall_temperature=310.0,
        inlet_temperature=320.0,
        inlet_pressure=60.0,
        cv=717.0,
        gas_constant=0.00287,
        m_av0=3.8e6,
        dt=1200.0,
        p_min=46.0,
        p_max=66.0,
        T_min=280.0,
        T_max=340.0,
        c_ain=1.8,
        c_aout=1.4,
        pch_min=10.0,
        pch_max=60.0,
        pdch_min=10.0,
        pdch_max=100.0,
        T_con=310.0,
    )
    base.update(overrides)
    return CavernParams(**base)


@pytest.fixture
def params():
    return make_params()


@pytest.fixture
def equilibrium(params):
    m = params.m_av0
    T = params.wall_temperature
    return CavernState(m, T, params.equilibrium_pressure(m))


def short_desk(steps: int = 3, start: int = 6):
    """The bundled desk case cut to ``steps`` fine steps beginning at index ``start``."""
    import re

    from caesuc.case import bundled, loads_case

    text = bundled("desk_case").read_text()

    def cut(match):
        key, body = match.group(1), match.group(2)
        vals = [v.strip() for v in body.strip("[]").split(",")]
        part = ", ".join(vals[start:start + steps])
        return f"{key} = [[{part}]]" if match.group(0).count("[[") else f"{key} = [{part}]"

    text = re.sub(r"^(load|wind) = \[\[(.*)\]\]$", cut, text, flags=re.M)
    text = re.sub(r"^(reserve) = (\[.*\])$", cut, text, flags=re.M)
    return loads_case(text)
