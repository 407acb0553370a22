from setuptools import setup, find_packages

setup(
    name="p3d",
    version="1.0.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    install_requires=[
        'numpy>=1.21.0',
        'scipy>=1.7.0',
        'pandas>=1.3.0',
        'torch>=2.0.0',
        'pydantic>=2.0.0',
        'Pillow>=8.3.0',
        'pytest>=6.2.0',
    ],
    extras_require={
        'dev': [
            'pytest-cov>=2.12.0',
            'black>=21.5b2',
            'isort>=5.9.0',
            'mypy>=0.910',
            'flake8>=3.9.0',
        ]
    },
    entry_points={
        'console_scripts': [
            'p3d=p3d.cli:main',
        ],
    },
    author="P3D Development Team",
    description="Hybrid CNN-Transformer surrogates for 3-D partial differential equations",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    python_requires=">=3.9",
)
