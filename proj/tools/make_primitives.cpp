// Writes the desk object pool: eight primitive meshes as OBJ files.
// Usage: make_primitives <out_dir>

#include <filesystem>
#include <iostream>

#include "seqgrasp/error.hpp"
#include "seqgrasp/geometry.hpp"

using namespace seqgrasp::geometry;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_primitives <out_dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);

  TriMesh ellipsoid = make_icosphere(0.5, 3);
  for (Vec3& v : ellipsoid.vertices) v = v.cwiseProduct(Vec3(1.0, 0.8, 0.7));

  const std::pair<const char*, TriMesh> objects[] = {
      {"sphere", make_icosphere(0.5, 3)},
      {"ellipsoid", ellipsoid},
      {"cube", make_box(Vec3(0.5, 0.5, 0.5))},
      {"box_flat", make_box(Vec3(0.5, 0.4, 0.25))},
      {"box_long", make_box(Vec3(0.5, 0.3, 0.25))},
      {"cylinder", make_cylinder(0.5, 0.5, 32)},
      {"cylinder_tall", make_cylinder(0.3, 0.5, 32)},
      {"hex_prism", make_cylinder(0.5, 0.35, 6)},
  };
  try {
    for (const auto& [name, mesh] : objects) {
      const auto path = dir / (std::string(name) + ".obj");
      save_obj(mesh, path);
      std::cout << path.string() << '\n';
    }
  } catch (const seqgrasp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
