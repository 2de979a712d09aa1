from setuptools import setup, find_packages

setup(
    name="spherelib",
    version="0.1.0",
    description="Angular-margin softmax embeddings on the hypersphere: training, margin bounds and angular evaluation",
    author="Spherelib developers",
    packages=find_packages(include=["spherelib", "spherelib.*"]),
    package_data={"spherelib": ["default_configs/*.yml"]},
    install_requires=["numpy", "scipy", "pyyaml", "platformdirs", "setuptools_scm"],
    entry_points={"console_scripts": ["spherelib = spherelib.cli:main"]},
    include_package_data=True,
    setup_requires=["setuptools_scm"],
    use_scm_version={
        "root": "..",
        "relative_to": __file__,
        "fallback_version": "0.1.0",
    },
)
