#pragma once

#include <string>
#include <vector>

#include "crashloc/corpus.hpp"

namespace fixtures {

inline crashloc::CrashRecord make_record(const std::vector<std::string>& frames, std::optional<std::size_t> blame,
                                         std::string cls = "NULL_POINTER_READ", std::string app = "msedge",
                                         std::int64_t ts = 1'600'000'000) {
  crashloc::CrashRecord r;
  for (const auto& f : frames) r.stack.push_back(crashloc::parse_frame(f));
  r.blame_index = blame;
  r.problem_class = std::move(cls);
  r.app = std::move(app);
  r.timestamp = ts;
  return r;
}

// Edge crash with logging helpers on top; the blamed frame is index 2.
inline const std::vector<std::string>& edge_logging_stack() {
  static const std::vector<std::string> s = {
      "msedge_elf.dll!crash_reporter::DumpWithoutCrashing",
      "msedge.dll!base::debug::DumpWithoutCrashing",
      "msedge.dll!gl::DirectCompositionChildSurfaceWin::ReleaseDrawTexture",
      "msedge.dll!gl::DirectCompositionChildSurfaceWin::SwapBuffers",
      "msedge.dll!gl::DirectCompositionChildSurfaceWin::SwapBuffers",
      "msedge.dll!gl::GLSurfaceAdapter::PostSubBuffer",
      "msedge.dll!gpu::PassThroughImageTransportSurface::PostSubBuffer",
      "msedge.exe!wWinMain"};
  return s;
}

// Edge crash in a graphics driver; the blamed frame is index 0.
inline const std::vector<std::string>& edge_driver_stack() {
  static const std::vector<std::string> s = {
      "igd10iumd64.dll!OpenAdapter10_2",
      "d3d11.dll!NDXGI::CDevice::RotateResourceIdentities",
      "dxgi.dll!CDXGISwapChain::PresentImplCore",
      "dxgi.dll!CDXGISwapChain::PresentImpl",
      "dxgi.dll!CDXGISwapChain::[IDXGISwapChain4]::Present1",
      "msedge.dll!gl::DirectCompositionChildSurfaceWin::ReleaseDrawTexture",
      "msedge.dll!gl::DirectCompositionChildSurfaceWin::SwapBuffers"};
  return s;
}

}  // namespace fixtures
