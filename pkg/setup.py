from setuptools import find_packages, setup

setup(
    name="aleufe",
    version="0.1.0",
    description="High-order unfitted finite elements on moving domains with discrete ALE maps",
    packages=find_packages(exclude=("*.tests",)),
    py_modules=["config", "main"],
    python_requires=">=3.10",
    install_requires=[
        "numpy==1.26.4",
        "scipy==1.13.1",
        "matplotlib==3.9.2",
        "scikit-image==0.24.0",
        "tqdm==4.66.5",
        "python-dotenv==1.1.1",
        "pydantic==2.9.2",
    ],
    extras_require={"test": ["pytest==8.3.3"]},
    entry_points={"console_scripts": ["aleufe=main:main"]},
)
