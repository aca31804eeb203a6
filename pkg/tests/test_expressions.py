import numpy as np
import pytest
import sympy

from geodex import expressions as ex


def test_numbers_and_precedence():
    assert ex.evaluate("1 + 2*3") == 7.0
    assert ex.evaluate("2^3^2") == 512.0          # right associative
    assert ex.evaluate("-2^2") == -4.0            # unary minus binds looser
    assert ex.evaluate("(1 + 2) * 3") == 9.0
    assert ex.evaluate("6 / 4") == 1.5
    assert ex.evaluate("1.5e2") == 150.0
    assert ex.evaluate(".5 + 0.25") == 0.75


def test_variables_and_functions():
    env = {"theta": 0.3, "r": 2.0}
    got = ex.evaluate("r^2 * sin(theta)^2", env)
    assert got == pytest.approx(4.0 * np.sin(0.3) ** 2, abs=1e-15)
    assert ex.evaluate("sqrt(r^2)", env) == pytest.approx(2.0)
    assert ex.evaluate("exp(log(r))", env) == pytest.approx(2.0)


def test_vectorized_evaluation():
    node = ex.parse("sin(x) * y + 1")
    x = np.linspace(0, 1, 7)
    y = np.linspace(1, 2, 7)
    got = node.evaluate({"x": x, "y": y})
    assert np.allclose(got, np.sin(x) * y + 1)


def test_parse_errors_carry_position():
    with pytest.raises(ex.ExprError) as err:
        ex.parse("1 + @", line=4)
    assert err.value.line == 4
    assert err.value.column == 5

    with pytest.raises(ex.ExprError) as err:
        ex.parse("sin(x")
    assert "expected ')'" in str(err.value)

    with pytest.raises(ex.ExprError):
        ex.parse("foo(2)")   # unknown function

    with pytest.raises(ex.ExprError):
        ex.constant_value("x + 1")


CASES = [
    "x^2 + 3*x - 1",
    "sin(x)*cos(x)",
    "tan(x/2)",
    "exp(-x^2)",
    "sqrt(1 + x^2)",
    "log(2 + sin(x))",
    "x^2 / (1 + cos(x)^2)",
    "-x * sin(2*x)",
    "(x + 1)^3",
    "1 / x",
]


@pytest.mark.parametrize("text", CASES)
def test_derivative_matches_sympy(text):
    node = ex.parse(text)
    deriv = node.diff("x")
    xs = sympy.Symbol("x")
    truth = sympy.lambdify(xs, sympy.diff(sympy.sympify(text.replace("^", "**")), xs), "numpy")
    pts = np.linspace(0.2, 1.7, 11)
    got = deriv.evaluate({"x": pts})
    assert np.allclose(got, truth(pts), rtol=1e-12, atol=1e-12)


def test_second_derivatives_against_sympy():
    rng = np.random.default_rng(5)
    text = "sin(x)^2 * cos(y) + x*y^2"
    node = ex.parse(text)
    dxy = node.diff("x").diff("y")
    xs, ys = sympy.symbols("x y")
    truth = sympy.lambdify(
        (xs, ys),
        sympy.diff(sympy.sympify(text.replace("^", "**")), xs, ys),
        "numpy",
    )
    for _ in range(20):
        x, y = rng.uniform(-2, 2, size=2)
        assert dxy.evaluate({"x": x, "y": y}) == pytest.approx(truth(x, y), abs=1e-12)


def test_constant_folding_keeps_trees_small():
    node = ex.parse("0*x + 1*y + 2*3")
    assert str(node) == "(y + 6.0)"
    assert ex.parse("x^1") == ex.Var("x")
    assert ex.parse("x^0") == ex.Num(1.0)
