"""msslab: mean-square stability analysis and synthesis for linear systems
with multiplicative input/output channel noise.

Subpackages
-----------
linalg     dense matrix kernel (eigenvalues, Kronecker algebra, Lyapunov)
model      state-space containers, channel sets, closed-loop assembly
moments    second-moment dynamics: lifted operator, covariance, certificates
msnorm     mean-square system norm and critical variance
sdp        self-contained semidefinite feasibility/minimization solver
synthesis  robust output-feedback design, D-K iteration, fundamental limits
sim        Euler-Maruyama simulation and moment validation
cli        command-line front end
"""

__version__ = "0.1.0"
